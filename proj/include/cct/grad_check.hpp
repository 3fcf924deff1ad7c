#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cct/tensor.hpp"

namespace cct {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

// Central-difference check of d f / d params. `f` builds a scalar graph from the current values of
// `params` and must not mutate any other state. Error per element is |analytic - numeric| / max(1, |numeric|).
inline GradCheckResult grad_check_detail(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params,
                                         double eps = 1e-6) {
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.clear_grad();
    }
    {
        Tape<double> tape;
        tape.backward(f());
    }
    std::vector<std::vector<double>> analytic;
    for (auto& p : params) {
        if (p.has_grad()) {
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        } else {
            analytic.emplace_back(p.numel(), 0.0);
        }
        p.clear_grad();
    }

    GradCheckResult r;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto values = params[pi].mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            // Divide by the step actually taken, not the nominal one.
            const double xp = saved + eps, xm = saved - eps;
            values[i] = xp;
            const double fp = f().item();
            values[i] = xm;
            const double fm = f().item();
            values[i] = saved;
            const double numeric = (fp - fm) / (xp - xm);
            if (!std::isfinite(numeric)) throw NumericError("grad_check: non-finite numeric gradient");
            const double err = std::abs(analytic[pi][i] - numeric) / std::max(1.0, std::abs(numeric));
            if (err > r.max_rel_error) {
                r.max_rel_error = err;
                r.worst_param = pi;
                r.worst_index = i;
            }
            ++r.checked;
        }
    }
    return r;
}

inline double grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params,
                         double eps = 1e-6) {
    return grad_check_detail(f, std::move(params), eps).max_rel_error;
}

}  // namespace cct
