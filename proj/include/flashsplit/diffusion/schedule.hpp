#pragma once

#include <string>
#include <vector>

#include "flashsplit/core/tensor.hpp"

namespace flashsplit {

// Variance schedule over discrete steps 1..steps; alpha_bar(0) is defined
// as 1 so a DDIM step can land exactly on clean data.
struct NoiseSchedule {
    int steps = 0;
    std::string kind;
    double beta_start = 0.0, beta_end = 0.0;
    std::vector<double> betas;      // betas[t-1] for step t
    std::vector<double> alpha_bars; // alpha_bars[t-1] = prod_{i<=t} (1 - beta_i)

    double alpha_bar(int t) const;
};

// kind: "linear" interpolates beta directly, "scaled_linear" interpolates
// sqrt(beta)
NoiseSchedule build_schedule(int steps, double beta_start, double beta_end,
                             const std::string& kind = "linear");

// s_t = sqrt(abar_t) s0 + sqrt(1 - abar_t) eps, 1 <= t <= steps
Tensor forward_diffuse(const Tensor& s0, const Tensor& eps, int t, const NoiseSchedule& sched);

// deterministic (eta = 0) update from step t to t_prev < t via the
// predicted-clean estimate
Tensor ddim_step(const Tensor& s_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& sched);

// descending inference grid t_i = steps - floor(i * steps / count), ending
// at the final transition target 0
std::vector<int> ddim_grid(int steps, int count);

} // namespace flashsplit
