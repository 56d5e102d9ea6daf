#pragma once

// Central finite differences against the tape's gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "flagcrash/autodiff.hpp"

namespace grad_check {

struct Result {
    double max_abs_error = 0.0;
    double max_abs_grad = 0.0;

    double relative() const { return max_abs_error / std::max(max_abs_grad, 1e-8); }
};

// `loss` must rebuild the graph from the parameters' current values.
inline Result compare(std::vector<flagcrash::ad::Tensor> params, const std::function<flagcrash::ad::Tensor()>& loss, double h = 1e-5) {
    for (auto& p : params) p.zero_grad();
    flagcrash::ad::backward(loss());
    Result r;
    for (auto& p : params) {
        const auto analytic = p.grad();
        auto values = p.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            double up, down;
            {
                flagcrash::ad::NoGradGuard guard;
                values[i] = saved + h;
                up = loss().item();
                values[i] = saved - h;
                down = loss().item();
            }
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            r.max_abs_error = std::max(r.max_abs_error, std::abs(numeric - analytic[i]));
            r.max_abs_grad = std::max({r.max_abs_grad, std::abs(numeric), std::abs(analytic[i])});
        }
    }
    return r;
}

}  // namespace grad_check
