#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "flashsplit/core/bind.hpp"
#include "flashsplit/core/rng.hpp"

namespace flashsplit {

inline Tensor randn(Rng& rng, int n, int c, int h, int w, double scale = 1.0) {
    Tensor t(n, c, h, w);
    for (double& v : t.v) v = scale * rng.normal();
    return t;
}

inline Tensor randu(Rng& rng, int n, int c, int h, int w, double lo = 0.0, double hi = 1.0) {
    Tensor t(n, c, h, w);
    for (double& v : t.v) v = rng.uniform(lo, hi);
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

// Central-difference check of d(loss)/d(param) on sampled elements. build
// must derive the scalar loss from the store alone so re-evaluation sees the
// perturbed value.
inline double fd_max_rel_err(ParamStore& ps, const std::function<int(Bind&)>& build,
                             const std::vector<std::string>& names, int per_param, uint64_t seed,
                             double h = 1e-5) {
    ps.zero_grads();
    Graph g;
    Bind b{g, ps, true, {}};
    g.backward(build(b));

    auto eval = [&]() {
        Graph g2;
        Bind b2{g2, ps, false, {}};
        return g2.val(build(b2)).v[0];
    };

    Rng rng(seed);
    double worst = 0.0;
    for (const std::string& name : names) {
        Tensor& v = ps.value(name);
        const Tensor& gr = ps.grad(name);
        for (int s = 0; s < per_param; ++s) {
            size_t k = size_t(rng.uniform_int(0, int(v.size()) - 1));
            double keep = v.v[k];
            v.v[k] = keep + h;
            double up = eval();
            v.v[k] = keep - h;
            double dn = eval();
            v.v[k] = keep;
            double fd = (up - dn) / (2.0 * h);
            double an = gr.v[k];
            double err = std::abs(fd - an) / std::max({1e-6, std::abs(fd), std::abs(an)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

} // namespace flashsplit
