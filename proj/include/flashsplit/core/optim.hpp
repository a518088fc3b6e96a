#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "flashsplit/core/params.hpp"

namespace flashsplit {

// Adam with bias correction and no schedule. State iteration follows the
// ParamStore's sorted name order, so updates are fully deterministic.
struct Adam {
    double lr;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;

    explicit Adam(double lr_) : lr(lr_) {}

    void step(ParamStore& params);
};

} // namespace flashsplit
