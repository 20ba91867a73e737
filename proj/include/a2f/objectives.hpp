// SPDX-License-Identifier: Apache-2.0
//
// Training losses and evaluation metrics. The combined loss is a Huber
// target term plus a cosine smoothness term over adjacent predicted frames;
// minimizing 1-cos pulls neighbouring frames together.
#pragma once

#include <vector>

#include "a2f/dataset.hpp"
#include "a2f/graph.hpp"
#include "a2f/model.hpp"

namespace a2f {

struct LossConfig {
    double w1 = 1.0;    // target weight
    double w2 = 0.5;    // smooth weight
    double delta = 1.0;  // Huber threshold

    void validate() const {
        if (w1 < 0.0 || w2 < 0.0 || delta <= 0.0) {
            throw std::runtime_error("LossConfig: need w1,w2 >= 0 and delta > 0");
        }
    }
};

struct LossReport {
    double total = 0.0;
    double target_term = 0.0;
    double smooth_term = 0.0;
};

// Mean over the 51 components of the per-component Huber value.
double huber(const BlendshapeFrame& target, const BlendshapeFrame& pred,
             double delta);

// 1 - cos(prev, curr). Zero-norm inputs return 0 and set *degenerate; that
// cannot happen for sigmoid outputs.
double smooth_loss(const BlendshapeFrame& prev, const BlendshapeFrame& curr,
                   bool* degenerate = nullptr);

// target_term averaged over n frames, smooth_term averaged over the n-1
// adjacent prediction pairs (0 when n == 1).
LossReport total_loss(const std::vector<BlendshapeFrame>& preds,
                      const std::vector<BlendshapeFrame>& targets,
                      const LossConfig& cfg);

// Root mean squared error over all frames x 51 components, normalized scale.
double rmse(const AnimTrack& pred, const AnimTrack& ref);

// Mean over adjacent frames of the L1 parameter delta / 51; the temporal
// instability measure the smooth term suppresses.
double jitter(const AnimTrack& track);

// ---------------------------------------------------------------------------
// Graph form, for training

// A contiguous run of frames inside a batch; smooth pairs only form within a
// chunk.
struct ChunkSpan {
    size_t start = 0;
    size_t len = 0;
};

template <typename T>
struct LossNodes {
    typename nn::GraphT<T>::Id total = -1;
    typename nn::GraphT<T>::Id target_term = -1;
    typename nn::GraphT<T>::Id smooth_term = -1;
};

// preds/targets are [B x 51]; chunks tile [0,B). The target term is the mean
// Huber over all B*51 entries; the smooth term is the mean of 1-cos over all
// adjacent in-chunk pairs.
template <typename T>
LossNodes<T> build_total_loss(nn::GraphT<T>& g,
                              typename nn::GraphT<T>::Id preds,
                              typename nn::GraphT<T>::Id targets,
                              const std::vector<ChunkSpan>& chunks,
                              const LossConfig& cfg) {
    cfg.validate();
    LossNodes<T> out;
    out.target_term =
        g.reduce_mean(g.huber_elem(preds, targets, static_cast<T>(cfg.delta)));

    typename nn::GraphT<T>::Id pair_sum = -1;
    size_t n_pairs = 0;
    for (const auto& chunk : chunks) {
        for (size_t i = 1; i < chunk.len; ++i) {
            auto prev = g.slice_rows(preds, chunk.start + i - 1, 1);
            auto curr = g.slice_rows(preds, chunk.start + i, 1);
            auto dist = g.affine(g.cos_sim(prev, curr), T(-1), T(1));
            pair_sum = pair_sum < 0 ? dist : g.add(pair_sum, dist);
            ++n_pairs;
        }
    }
    out.smooth_term = n_pairs == 0
                          ? g.scalar_value(T(0))
                          : g.affine(pair_sum, T(1) / static_cast<T>(n_pairs),
                                     T(0));
    out.total = g.add(g.affine(out.target_term, static_cast<T>(cfg.w1), T(0)),
                      g.affine(out.smooth_term, static_cast<T>(cfg.w2), T(0)));
    return out;
}

}  // namespace a2f
