#pragma once

// Central finite-difference gradient checker. Lives in test code only and is
// independent of the autodiff path it verifies.

#include <cmath>
#include <functional>

#include "hpun/tensor.hpp"

namespace hpun_test {

// Max relative error between the analytic gradient of sum(f(x)) w.r.t. a
// chosen leaf and central differences with step h. `forward` must rebuild
// the graph from scratch each call (the tape is single-use).
inline double gradcheck(
    hpun::Tensor<double>& leaf,
    const std::function<hpun::Tensor<double>()>& forward,
    double h = 1e-5) {
    using namespace hpun;

    leaf.zero_grad();
    Tensor<double> loss = sum_all(forward());
    backward(loss);
    std::vector<double> analytic = *leaf.grad;

    double max_rel = 0.0;
    auto& xv = *leaf.data;
    for (size_t i = 0; i < xv.size(); ++i) {
        const double orig = xv[i];
        xv[i] = orig + h;
        double fp = (*sum_all(forward().detached()).data)[0];
        xv[i] = orig - h;
        double fm = (*sum_all(forward().detached()).data)[0];
        xv[i] = orig;
        const double num = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(num), std::abs(analytic[i]), 1e-8});
        max_rel = std::max(max_rel, std::abs(num - analytic[i]) / denom);
    }
    return max_rel;
}

}  // namespace hpun_test
