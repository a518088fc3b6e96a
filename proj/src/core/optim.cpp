#include "flashsplit/core/optim.hpp"

#include <cmath>

#include "flashsplit/core/exec.hpp"

namespace flashsplit {

void Adam::step(ParamStore& params) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [name, p] : params.values) {
        const Tensor& g = params.grads.at(name);
        Tensor& mt = m.try_emplace(name, Tensor(p.n, p.c, p.h, p.w)).first->second;
        Tensor& vt = v.try_emplace(name, Tensor(p.n, p.c, p.h, p.w)).first->second;
        parallel_for(static_cast<std::ptrdiff_t>(p.size()), [&, this](std::ptrdiff_t ii) {
            const size_t i = static_cast<size_t>(ii);
            const double gi = g.v[i];
            mt.v[i] = beta1 * mt.v[i] + (1.0 - beta1) * gi;
            vt.v[i] = beta2 * vt.v[i] + (1.0 - beta2) * gi * gi;
            const double mhat = mt.v[i] / bc1;
            const double vhat = vt.v[i] / bc2;
            p.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        });
    }
}

} // namespace flashsplit
