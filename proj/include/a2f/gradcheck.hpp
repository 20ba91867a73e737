// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "a2f/graph.hpp"

namespace a2f {
namespace nn {

struct GradCheckReport {
    double worst_rel = 0.0;
    std::string worst_param;
    size_t worst_index = 0;
    bool pass = false;
};

// A builder registers each tensor of `params` (in order, via g.param) and
// returns the scalar loss node plus the param node ids. It must be
// deterministic: same param contents, same loss.
struct BuiltLoss {
    GraphT<double>::Id loss = -1;
    std::vector<GraphT<double>::Id> params;
};

using ParamSet = std::vector<std::pair<std::string, TensorT<double>*>>;
using LossBuilder = std::function<BuiltLoss(GraphT<double>&)>;

// Central finite differences against caller-supplied gradients (one tensor
// per param, same order). Relative error uses max(|a|,|b|,1e-6) as the
// denominator so near-zero gradients don't blow up the ratio.
GradCheckReport compare_gradients_fd(const ParamSet& params,
                                     const LossBuilder& build,
                                     const std::vector<TensorT<double>>& grads,
                                     double tolerance, double step = 1e-4);

// Runs backward() on the built loss and checks every parameter entry against
// central finite differences. Failures are reported, not thrown.
GradCheckReport gradient_check(const ParamSet& params, const LossBuilder& build,
                               double tolerance, double step = 1e-4);

}  // namespace nn
}  // namespace a2f
