#pragma once

#include <vector>

#include "flashsplit/core/tensor.hpp"

namespace flashsplit {

// Numerical kernels. ref:: holds the plain serial implementations used as
// the testing reference; kern:: holds the optimized OpenMP ones used by the
// rest of the code. Both fix the same per-output-element accumulation order,
// so their results are bit-identical regardless of thread count:
//   conv2d forward:   bias first, then (ic, ky, kx) ascending
//   conv2d_bwd_x:     (oc, ky, kx) ascending
//   conv2d_bwd_w, _b: (n, oy, ox) ascending
//   bmm:              k ascending
//   group_norm:       flat in-group offset ascending, two-pass mean/var
//   softmax_h:        h ascending
// Tensor layouts: activations are [N,C,H,W]; conv weights [Cout,Cin,KH,KW];
// conv bias [1,Cout,1,1]; bmm operands are [B,M,K] stored as {n=B,c=M,h=K,w=1}
// (n=1 on the second operand broadcasts it across the batch).

struct GnCache {
    Tensor mean; // [N,G,1,1]
    Tensor rstd; // [N,G,1,1]
};

namespace ref {

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor conv2d_bwd_x(const Tensor& gy, const Tensor& w, int stride, int pad, int H, int W);
Tensor conv2d_bwd_w(const Tensor& gy, const Tensor& x, int kh, int kw, int stride, int pad);
Tensor conv2d_bwd_b(const Tensor& gy);

Tensor bmm(const Tensor& a, bool ta, const Tensor& b, bool tb);

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps, GnCache& cache);

Tensor softmax_h(const Tensor& x);

Tensor silu(const Tensor& x);

Tensor upsample2x(const Tensor& x);

} // namespace ref

namespace kern {

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor conv2d_bwd_x(const Tensor& gy, const Tensor& w, int stride, int pad, int H, int W);
Tensor conv2d_bwd_w(const Tensor& gy, const Tensor& x, int kh, int kw, int stride, int pad);
Tensor conv2d_bwd_b(const Tensor& gy);

// Same fixed kernel applied to every channel, valid padding, no kernel grad.
// Backs the differentiable SSIM windows.
Tensor depthwise_valid(const Tensor& x, const std::vector<double>& k, int kh, int kw);
Tensor depthwise_valid_bwd_x(const Tensor& gy, const std::vector<double>& k, int kh, int kw,
                             int H, int W);

Tensor bmm(const Tensor& a, bool ta, const Tensor& b, bool tb);
void bmm_bwd(const Tensor& gy, const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor* ga,
             Tensor* gb);

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps, GnCache& cache);
void group_norm_bwd(const Tensor& gy, const Tensor& x, int groups, const Tensor& gamma,
                    const GnCache& cache, Tensor* gx, Tensor* dgamma, Tensor* dbeta);

Tensor softmax_h(const Tensor& x);
Tensor softmax_h_bwd(const Tensor& y, const Tensor& gy);

Tensor silu(const Tensor& x);
Tensor silu_bwd(const Tensor& x, const Tensor& gy);

Tensor upsample2x(const Tensor& x);
Tensor upsample2x_bwd(const Tensor& gy);

} // namespace kern

} // namespace flashsplit
