#pragma once

// Finite-difference oracle. Lives apart from the tape on purpose: it only
// ever calls a black-box scalar function, so it stays independent of the
// backward pass it is used to check.

#include <cmath>
#include <functional>
#include <string>

#include "breen/array.hpp"

namespace breen::num {

// Central differences (f(x+e_i*eps) - f(x-e_i*eps)) / (2 eps) per coordinate.
inline ArrayD finite_difference_gradient(const std::function<double(const ArrayD&)>& f, const ArrayD& theta,
                                         double eps = 1e-4) {
    if (eps <= 0) throw contract_error("finite_difference_gradient: eps must be positive");
    ArrayD grad(theta.shape);
    ArrayD probe = theta;
    for (std::size_t i = 0; i < theta.data.size(); ++i) {
        const double keep = probe.data[i];
        probe.data[i] = keep + eps;
        const double up = f(probe);
        probe.data[i] = keep - eps;
        const double down = f(probe);
        probe.data[i] = keep;
        grad.data[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

struct GradCheck {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t worst_index = 0;
    bool pass = true;
};

// rel err per coordinate = |a-f| / max(|a|,|f|,floor); coordinates whose
// absolute error is below atol are accepted regardless (kills fin-diff noise
// on near-zero gradients).
inline GradCheck compare_gradients(const ArrayD& analytic, const ArrayD& fd, double rtol, double atol = 1e-7,
                                   double floor_val = 1e-6) {
    if (!analytic.same_shape(fd)) throw contract_error("compare_gradients: shape mismatch");
    GradCheck r;
    for (std::size_t i = 0; i < analytic.data.size(); ++i) {
        const double a = analytic.data[i], f = fd.data[i];
        const double abs_err = std::abs(a - f);
        const double rel = abs_err / std::max({std::abs(a), std::abs(f), floor_val});
        if (rel > r.max_rel_err) {
            r.max_rel_err = rel;
            r.worst_index = i;
        }
        if (abs_err > r.max_abs_err) r.max_abs_err = abs_err;
        if (abs_err > atol && rel > rtol) r.pass = false;
    }
    return r;
}

}  // namespace breen::num
