// Copyright 2026 the dmsc authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Central finite-difference gradient oracle. Used by the unit tests and the
// acceptance suite; intentionally independent of any backward() code path.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dmsc/autodiff.hpp"

namespace dmsc::testing {

inline double grad_rel_err(double analytic, double numeric) {
    // Scale floor keeps the ratio meaningful when both gradients are ~0;
    // the finite-difference noise floor is ~1e-9 for O(1) losses.
    return std::fabs(analytic - numeric) /
           std::max({std::fabs(analytic), std::fabs(numeric), 1e-2});
}

struct GradReport {
    double max_rel_err = 0.0;
    std::string worst_element;
};

/// Compares backward() gradients of `make_loss()` against central finite
/// differences for every element of every tensor in `params`. `make_loss`
/// must rebuild the graph from scratch on each call (values are read from
/// the shared parameter leaves, which this harness perturbs in place).
inline GradReport check_gradients(const std::function<VarPtr()>& make_loss,
                                  const std::vector<VarPtr>& params, double h = 1e-5) {
    for (const auto& p : params) p->zero_grad();
    backward(make_loss());

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        p->ensure_grad();
        analytic.push_back(p->grad);
    }

    GradReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& theta = params[pi]->value;
        for (std::size_t i = 0; i < theta.numel(); ++i) {
            const double orig = theta.at(i);
            theta.at(i) = orig + h;
            const double fp = make_loss()->value.at(0);
            theta.at(i) = orig - h;
            const double fm = make_loss()->value.at(0);
            theta.at(i) = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double err = grad_rel_err(analytic[pi][i], numeric);
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst_element =
                    (params[pi]->name.empty() ? "param" + std::to_string(pi) : params[pi]->name) +
                    "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

}  // namespace dmsc::testing
