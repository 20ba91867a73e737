// SPDX-License-Identifier: Apache-2.0
#include "a2f/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace a2f {

double huber(const BlendshapeFrame& target, const BlendshapeFrame& pred,
             double delta) {
    if (delta <= 0.0) throw std::runtime_error("huber: delta must be positive");
    double acc = 0.0;
    for (size_t j = 0; j < kBlendshapeDim; ++j) {
        const double e = static_cast<double>(target.params[j]) -
                         static_cast<double>(pred.params[j]);
        const double ae = std::abs(e);
        acc += ae <= delta ? 0.5 * e * e : delta * ae - 0.5 * delta * delta;
    }
    return acc / static_cast<double>(kBlendshapeDim);
}

double smooth_loss(const BlendshapeFrame& prev, const BlendshapeFrame& curr,
                   bool* degenerate) {
    if (degenerate != nullptr) *degenerate = false;
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (size_t j = 0; j < kBlendshapeDim; ++j) {
        const double a = prev.params[j], b = curr.params[j];
        dot += a * b;
        na2 += a * a;
        nb2 += b * b;
    }
    if (na2 <= 0.0 || nb2 <= 0.0) {
        if (degenerate != nullptr) *degenerate = true;
        return 0.0;
    }
    return 1.0 - dot / (std::sqrt(na2) * std::sqrt(nb2));
}

LossReport total_loss(const std::vector<BlendshapeFrame>& preds,
                      const std::vector<BlendshapeFrame>& targets,
                      const LossConfig& cfg) {
    cfg.validate();
    if (preds.empty() || preds.size() != targets.size()) {
        throw std::runtime_error("total_loss: need equal nonempty sequences, got " +
                                 std::to_string(preds.size()) + " vs " +
                                 std::to_string(targets.size()));
    }
    const size_t n = preds.size();
    LossReport report;
    for (size_t i = 0; i < n; ++i) {
        report.target_term += huber(targets[i], preds[i], cfg.delta);
    }
    report.target_term /= static_cast<double>(n);
    for (size_t i = 1; i < n; ++i) {
        report.smooth_term += smooth_loss(preds[i - 1], preds[i]);
    }
    report.smooth_term /= static_cast<double>(std::max<size_t>(n - 1, 1));
    report.total = cfg.w1 * report.target_term + cfg.w2 * report.smooth_term;
    return report;
}

double rmse(const AnimTrack& pred, const AnimTrack& ref) {
    if (pred.size() != ref.size()) {
        throw std::runtime_error("rmse: frame count mismatch " +
                                 std::to_string(pred.size()) + " vs " +
                                 std::to_string(ref.size()));
    }
    if (pred.size() == 0) throw std::runtime_error("rmse: empty tracks");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        for (size_t j = 0; j < kBlendshapeDim; ++j) {
            const double e = static_cast<double>(pred.frames[i].params[j]) -
                             static_cast<double>(ref.frames[i].params[j]);
            acc += e * e;
        }
    }
    return std::sqrt(acc / static_cast<double>(pred.size() * kBlendshapeDim));
}

double jitter(const AnimTrack& track) {
    if (track.size() < 2) {
        throw std::runtime_error("jitter: need at least 2 frames, got " +
                                 std::to_string(track.size()));
    }
    double acc = 0.0;
    for (size_t i = 1; i < track.size(); ++i) {
        double l1 = 0.0;
        for (size_t j = 0; j < kBlendshapeDim; ++j) {
            l1 += std::abs(static_cast<double>(track.frames[i].params[j]) -
                           static_cast<double>(track.frames[i - 1].params[j]));
        }
        acc += l1 / static_cast<double>(kBlendshapeDim);
    }
    return acc / static_cast<double>(track.size() - 1);
}

}  // namespace a2f
