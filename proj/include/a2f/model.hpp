// SPDX-License-Identifier: Apache-2.0
//
// The regression network: two bidirectional LSTM layers over the 64-frame
// acoustic window, attention pooling to a single vector, and a two-layer
// dense head that emits 51 blendshape parameters in (0,1).
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "a2f/features.hpp"
#include "a2f/graph.hpp"

namespace a2f {

constexpr size_t kBlendshapeDim = 51;

// Normalized blendshape parameters in [0,1]; the on-disk scale is [0,100].
struct BlendshapeFrame {
    std::array<float, kBlendshapeDim> params{};
};

struct ModelConfig {
    size_t hidden_size = 256;
    size_t basis_size = 128;
    bool bidirectional = true;
    bool use_attention = true;
    size_t input_rows = kWindowFrames;
    size_t input_cols = kFeatureDim;

    void validate() const {
        if (hidden_size == 0 || basis_size == 0 || input_rows == 0 ||
            input_cols == 0) {
            throw std::runtime_error("ModelConfig: sizes must be positive");
        }
    }
};

template <typename T>
struct LstmCellParamsT {
    nn::TensorT<T> w_x;  // [input x 4H], gate columns blocked [i|f|g|o]
    nn::TensorT<T> w_h;  // [H x 4H]
    nn::TensorT<T> b;    // [1 x 4H]
};

template <typename T>
struct BiLstmLayerParamsT {
    LstmCellParamsT<T> fwd;
    LstmCellParamsT<T> bwd;          // absent when unidirectional
    nn::TensorT<T> combine_fwd;      // [H x H]
    nn::TensorT<T> combine_bwd;      // [H x H], absent when unidirectional
    nn::TensorT<T> combine_bias;     // [1 x H]
};

template <typename T>
struct ModelParamsT {
    ModelConfig config;
    BiLstmLayerParamsT<T> layer1;
    BiLstmLayerParamsT<T> layer2;
    nn::TensorT<T> attention_w;  // [H x 1], absent when use_attention=false
    nn::TensorT<T> dense1_w;     // [H x basis]
    nn::TensorT<T> dense1_b;     // [1 x basis]
    nn::TensorT<T> dense2_w;     // [basis x 51]
    nn::TensorT<T> dense2_b;     // [1 x 51]

    // Visits every live tensor in a fixed order (checkpoint and optimizer
    // order). The callback gets a stable slash-separated name.
    template <typename Fn>
    void visit(Fn&& fn) {
        auto cell = [&](const std::string& prefix, LstmCellParamsT<T>& c) {
            fn(prefix + "/Wx", c.w_x);
            fn(prefix + "/Wh", c.w_h);
            fn(prefix + "/b", c.b);
        };
        auto layer = [&](const std::string& prefix, BiLstmLayerParamsT<T>& l) {
            cell(prefix + "/fwd", l.fwd);
            if (config.bidirectional) cell(prefix + "/bwd", l.bwd);
            fn(prefix + "/comb/Wf", l.combine_fwd);
            if (config.bidirectional) fn(prefix + "/comb/Wb", l.combine_bwd);
            fn(prefix + "/comb/b", l.combine_bias);
        };
        layer("layer1", layer1);
        layer("layer2", layer2);
        if (config.use_attention) fn("attention/w", attention_w);
        fn("head/dense1/W", dense1_w);
        fn("head/dense1/b", dense1_b);
        fn("head/dense2/W", dense2_w);
        fn("head/dense2/b", dense2_b);
    }

    template <typename Fn>
    void visit(Fn&& fn) const {
        const_cast<ModelParamsT*>(this)->visit(
            [&](const std::string& name, nn::TensorT<T>& t) {
                fn(name, static_cast<const nn::TensorT<T>&>(t));
            });
    }
};

using ModelParams = ModelParamsT<float>;

// Gaussian init, std = 1/sqrt(fan_in); biases zero except the forget gate
// block, which starts at 1.
ModelParams init_model(const ModelConfig& cfg, uint64_t seed);

template <typename U, typename T>
ModelParamsT<U> cast_params(const ModelParamsT<T>& p) {
    ModelParamsT<U> out;
    out.config = p.config;
    auto conv = [](const nn::TensorT<T>& src) {
        nn::TensorT<U> dst;
        dst.shape = src.shape;
        dst.data.reserve(src.data.size());
        for (T v : src.data) dst.data.push_back(static_cast<U>(v));
        return dst;
    };
    auto cell = [&](const LstmCellParamsT<T>& c) {
        return LstmCellParamsT<U>{conv(c.w_x), conv(c.w_h), conv(c.b)};
    };
    auto layer = [&](const BiLstmLayerParamsT<T>& l) {
        BiLstmLayerParamsT<U> o;
        o.fwd = cell(l.fwd);
        if (p.config.bidirectional) o.bwd = cell(l.bwd);
        o.combine_fwd = conv(l.combine_fwd);
        if (p.config.bidirectional) o.combine_bwd = conv(l.combine_bwd);
        o.combine_bias = conv(l.combine_bias);
        return o;
    };
    out.layer1 = layer(p.layer1);
    out.layer2 = layer(p.layer2);
    if (p.config.use_attention) out.attention_w = conv(p.attention_w);
    out.dense1_w = conv(p.dense1_w);
    out.dense1_b = conv(p.dense1_b);
    out.dense2_w = conv(p.dense2_w);
    out.dense2_b = conv(p.dense2_b);
    return out;
}

// ---------------------------------------------------------------------------
// Graph construction

// Handles into a built forward pass. `params` is empty for frozen
// (inference-only) graphs.
template <typename T>
struct ModelGraph {
    using Id = typename nn::GraphT<T>::Id;
    Id input = -1;  // [T*B x input_cols] leaf, t-major rows
    Id preds = -1;  // [B x 51]
    Id alpha = -1;  // [B x T], -1 when attention is off
    std::vector<std::pair<std::string, Id>> params;
};

// Builds the full forward pass for a batch of B windows. The input tensor
// stacks the windows t-major: row t*B+b is audio frame t of window b.
template <typename T>
ModelGraph<T> build_model_graph(nn::GraphT<T>& g, const ModelParamsT<T>& p,
                                const nn::TensorT<T>& input, size_t batch,
                                bool trainable) {
    using Id = typename nn::GraphT<T>::Id;
    p.config.validate();
    const size_t Tn = p.config.input_rows;
    if (input.rows() != Tn * batch || input.cols() != p.config.input_cols) {
        throw std::runtime_error("model: input shape " + input.shape_str() +
                                 " does not match " + std::to_string(Tn) + "x" +
                                 std::to_string(p.config.input_cols) +
                                 " windows at batch " + std::to_string(batch));
    }

    ModelGraph<T> mg;
    auto reg = [&](const std::string& name, const nn::TensorT<T>& t) -> Id {
        if (trainable) {
            Id id = g.param(t);
            mg.params.emplace_back(name, id);
            return id;
        }
        return g.value(t);
    };

    mg.input = g.value(input);

    auto run_direction = [&](Id x_all, const std::string& prefix,
                             const LstmCellParamsT<T>& cell, bool reversed) {
        Id wx = reg(prefix + "/Wx", cell.w_x);
        Id wh = reg(prefix + "/Wh", cell.w_h);
        Id b = reg(prefix + "/b", cell.b);
        return g.lstm_sequence(g.matmul(x_all, wx), wh, b, batch, reversed);
    };

    auto bilstm = [&](Id x_all, const std::string& prefix,
                      const BiLstmLayerParamsT<T>& layer) {
        Id hf = run_direction(x_all, prefix + "/fwd", layer.fwd, false);
        Id proj = g.matmul(hf, reg(prefix + "/comb/Wf", layer.combine_fwd));
        if (p.config.bidirectional) {
            Id hb = run_direction(x_all, prefix + "/bwd", layer.bwd, true);
            proj = g.add(proj,
                         g.matmul(hb, reg(prefix + "/comb/Wb", layer.combine_bwd)));
        }
        return g.add(proj, reg(prefix + "/comb/b", layer.combine_bias));
    };

    Id h1 = bilstm(mg.input, "layer1", p.layer1);
    Id h2 = bilstm(h1, "layer2", p.layer2);

    Id pooled;
    if (p.config.use_attention) {
        Id w = reg("attention/w", p.attention_w);
        Id scores = g.matmul(g.tanh(h2), w);              // [T*B x 1]
        Id scores_bt = g.transpose(g.reshape(scores, Tn, batch));
        mg.alpha = g.softmax_rows(scores_bt);             // [B x T]
        g.keep(mg.alpha);
        pooled = g.weighted_sum_rows(h2, mg.alpha);
    } else {
        pooled = g.slice_rows(h2, (Tn - 1) * batch, batch);
    }

    Id basis = g.tanh(g.add(g.matmul(pooled, reg("head/dense1/W", p.dense1_w)),
                            reg("head/dense1/b", p.dense1_b)));
    mg.preds = g.sigmoid(
        g.add(g.matmul(basis, reg("head/dense2/W", p.dense2_w)),
              reg("head/dense2/b", p.dense2_b)));
    g.keep(mg.preds);
    return mg;
}

// ---------------------------------------------------------------------------
// Single-sample operations (B=1 through the same graph code)

// One LSTM step. Vectors are rank-1 tensors; returns (h, c).
std::pair<nn::Tensor, nn::Tensor> lstm_cell_step(
    const nn::Tensor& x, const nn::Tensor& h_prev, const nn::Tensor& c_prev,
    const LstmCellParamsT<float>& cell);

// Runs one bidirectional layer over a [T x d] sequence; returns [T x H].
nn::Tensor bilstm_forward(const nn::Tensor& seq,
                          const BiLstmLayerParamsT<float>& layer,
                          bool bidirectional = true);

// Attention pooling of a [T x H] state matrix; returns (y [H], alpha [T]).
std::pair<nn::Tensor, nn::Tensor> attention_pool(const nn::Tensor& h,
                                                 const nn::Tensor& score_w);

// Dense head on a pooled vector.
BlendshapeFrame output_head(const nn::Tensor& pooled, const ModelParams& p);

// Full forward for one normalized window. alpha_out (optional) receives the
// attention weights when attention is enabled.
BlendshapeFrame model_forward(const FeatureWindow& window, const ModelParams& p,
                              std::vector<float>* alpha_out = nullptr);

}  // namespace a2f
