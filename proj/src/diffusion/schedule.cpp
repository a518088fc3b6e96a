#include "flashsplit/diffusion/schedule.hpp"

#include <cmath>

#include "flashsplit/core/error.hpp"

namespace flashsplit {

double NoiseSchedule::alpha_bar(int t) const {
    require(t >= 0 && t <= steps, ErrorKind::contract, "alpha_bar: step out of range");
    return t == 0 ? 1.0 : alpha_bars[size_t(t) - 1];
}

NoiseSchedule build_schedule(int steps, double beta_start, double beta_end,
                             const std::string& kind) {
    require(steps >= 1, ErrorKind::config, "schedule needs at least one step");
    require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, ErrorKind::config,
            "schedule needs 0 < beta_start <= beta_end < 1");
    require(kind == "linear" || kind == "scaled_linear", ErrorKind::config,
            "unknown schedule kind: " + kind);
    NoiseSchedule s;
    s.steps = steps;
    s.kind = kind;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.betas.resize(size_t(steps));
    s.alpha_bars.resize(size_t(steps));
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        double u = steps == 1 ? 0.0 : double(i) / (steps - 1);
        double beta;
        if (kind == "linear") {
            beta = beta_start + (beta_end - beta_start) * u;
        } else {
            double r = std::sqrt(beta_start) + (std::sqrt(beta_end) - std::sqrt(beta_start)) * u;
            beta = r * r;
        }
        s.betas[size_t(i)] = beta;
        prod *= 1.0 - beta;
        s.alpha_bars[size_t(i)] = prod;
        require(prod > 0.0, ErrorKind::config, "schedule collapsed to zero signal");
        if (i > 0)
            require(s.alpha_bars[size_t(i)] < s.alpha_bars[size_t(i) - 1], ErrorKind::config,
                    "alpha_bar must decrease strictly");
    }
    return s;
}

Tensor forward_diffuse(const Tensor& s0, const Tensor& eps, int t, const NoiseSchedule& sched) {
    require(s0.same_shape(eps), ErrorKind::shape, "forward_diffuse: shape mismatch");
    require(t >= 1 && t <= sched.steps, ErrorKind::contract,
            "forward_diffuse: step must lie in [1, steps]");
    double ab = sched.alpha_bar(t);
    double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor out = s0;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] = a * s0.v[i] + b * eps.v[i];
    return out;
}

Tensor ddim_step(const Tensor& s_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& sched) {
    require(s_t.same_shape(eps_hat), ErrorKind::shape, "ddim_step: shape mismatch");
    require(t >= 1 && t <= sched.steps, ErrorKind::contract, "ddim_step: t out of range");
    require(t_prev >= 0 && t_prev < t, ErrorKind::contract, "ddim_step: need t_prev < t");
    double ab_t = sched.alpha_bar(t), ab_p = sched.alpha_bar(t_prev);
    double rt = std::sqrt(ab_t), rn = std::sqrt(1.0 - ab_t);
    double pt = std::sqrt(ab_p), pn = std::sqrt(1.0 - ab_p);
    Tensor out = s_t;
    for (size_t i = 0; i < out.size(); ++i) {
        double s0_hat = (s_t.v[i] - rn * eps_hat.v[i]) / rt;
        out.v[i] = pt * s0_hat + pn * eps_hat.v[i];
    }
    return out;
}

std::vector<int> ddim_grid(int steps, int count) {
    require(count >= 1 && count <= steps, ErrorKind::config,
            "inference step count must lie in [1, schedule steps]");
    std::vector<int> grid;
    for (int i = 0; i < count; ++i)
        grid.push_back(steps - int((int64_t(i) * steps) / count));
    grid.push_back(0);
    for (size_t i = 1; i < grid.size(); ++i)
        require(grid[i] < grid[i - 1], ErrorKind::contract, "ddim grid must decrease strictly");
    return grid;
}

} // namespace flashsplit
