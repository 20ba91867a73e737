// SPDX-License-Identifier: Apache-2.0
#include "a2f/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace a2f {
namespace nn {

namespace {

double eval_loss(const LossBuilder& build) {
    GraphT<double> g;
    BuiltLoss bl = build(g);
    return g.val(bl.loss).scalar();
}

}  // namespace

GradCheckReport compare_gradients_fd(const ParamSet& params,
                                     const LossBuilder& build,
                                     const std::vector<TensorT<double>>& grads,
                                     double tolerance, double step) {
    GradCheckReport report;
    for (size_t p = 0; p < params.size(); ++p) {
        TensorT<double>* t = params[p].second;
        for (size_t i = 0; i < t->numel(); ++i) {
            const double saved = t->data[i];
            t->data[i] = saved + step;
            const double lp = eval_loss(build);
            t->data[i] = saved - step;
            const double lm = eval_loss(build);
            t->data[i] = saved;
            const double fd = (lp - lm) / (2.0 * step);
            const double ad = grads[p].data[i];
            const double denom =
                std::max({std::abs(ad), std::abs(fd), 1e-6});
            const double rel = std::abs(ad - fd) / denom;
            if (rel > report.worst_rel) {
                report.worst_rel = rel;
                report.worst_param = params[p].first;
                report.worst_index = i;
            }
        }
    }
    report.pass = report.worst_rel < tolerance;
    return report;
}

GradCheckReport gradient_check(const ParamSet& params, const LossBuilder& build,
                               double tolerance, double step) {
    GraphT<double> g;
    BuiltLoss bl = build(g);
    g.backward(bl.loss);
    std::vector<TensorT<double>> grads;
    grads.reserve(bl.params.size());
    for (auto id : bl.params) grads.push_back(g.grad_of(id));
    return compare_gradients_fd(params, build, grads, tolerance, step);
}

}  // namespace nn
}  // namespace a2f
