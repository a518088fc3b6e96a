#pragma once

#include "flashsplit/core/graph.hpp"

namespace flashsplit {

int mean_sq(Graph& g, int x);
int mean_sq_diff(Graph& g, int a, int b);
int l1_diff(Graph& g, int a, int b);

// differentiable Gaussian-window SSIM matching the plain metric's recipe
int ssim_graph(Graph& g, int a, int b, int window = 11, double k1 = 0.01, double k2 = 0.03,
               double peak = 1.0);

} // namespace flashsplit
