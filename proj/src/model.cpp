// SPDX-License-Identifier: Apache-2.0
#include "a2f/model.hpp"

#include <cmath>
#include <stdexcept>

#include "a2f/rng.hpp"

namespace a2f {

namespace {

nn::Tensor gaussian(size_t r, size_t c, size_t fan_in, Rng& rng) {
    const float std = 1.0f / std::sqrt(static_cast<float>(fan_in));
    return nn::Tensor::randn(r, c, std, rng);
}

LstmCellParamsT<float> init_cell(size_t input, size_t hidden, Rng& rng) {
    LstmCellParamsT<float> c;
    c.w_x = gaussian(input, 4 * hidden, input, rng);
    c.w_h = gaussian(hidden, 4 * hidden, hidden, rng);
    c.b = nn::Tensor::zeros(1, 4 * hidden);
    // Forget-gate block starts open.
    for (size_t u = 0; u < hidden; ++u) c.b.at(0, hidden + u) = 1.0f;
    return c;
}

BiLstmLayerParamsT<float> init_layer(size_t input, size_t hidden, bool bidir,
                                     Rng& rng) {
    BiLstmLayerParamsT<float> l;
    l.fwd = init_cell(input, hidden, rng);
    if (bidir) l.bwd = init_cell(input, hidden, rng);
    l.combine_fwd = gaussian(hidden, hidden, hidden, rng);
    if (bidir) l.combine_bwd = gaussian(hidden, hidden, hidden, rng);
    l.combine_bias = nn::Tensor::zeros(1, hidden);
    return l;
}

}  // namespace

ModelParams init_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams p;
    p.config = cfg;
    p.layer1 = init_layer(cfg.input_cols, cfg.hidden_size, cfg.bidirectional, rng);
    p.layer2 = init_layer(cfg.hidden_size, cfg.hidden_size, cfg.bidirectional,
                          rng);
    if (cfg.use_attention) {
        p.attention_w = gaussian(cfg.hidden_size, 1, cfg.hidden_size, rng);
    }
    p.dense1_w = gaussian(cfg.hidden_size, cfg.basis_size, cfg.hidden_size, rng);
    p.dense1_b = nn::Tensor::zeros(1, cfg.basis_size);
    p.dense2_w = gaussian(cfg.basis_size, kBlendshapeDim, cfg.basis_size, rng);
    p.dense2_b = nn::Tensor::zeros(1, kBlendshapeDim);
    return p;
}

std::pair<nn::Tensor, nn::Tensor> lstm_cell_step(
    const nn::Tensor& x, const nn::Tensor& h_prev, const nn::Tensor& c_prev,
    const LstmCellParamsT<float>& cell) {
    const size_t H = cell.w_h.rows();
    if (x.cols() != cell.w_x.rows() || h_prev.cols() != H || c_prev.cols() != H) {
        throw std::runtime_error("lstm_cell_step: shape mismatch x=" +
                                 x.shape_str() + " h=" + h_prev.shape_str() +
                                 " c=" + c_prev.shape_str() + " vs Wx=" +
                                 cell.w_x.shape_str());
    }
    nn::Graph g;
    auto xrow = nn::Tensor::from_rows(1, x.cols(), x.data);
    auto xw = g.matmul(g.value(xrow), g.value(cell.w_x));
    nn::Tensor state = nn::Tensor::zeros(2, H);
    for (size_t u = 0; u < H; ++u) {
        state.at(0, u) = h_prev.data[u];
        state.at(1, u) = c_prev.data[u];
    }
    auto out = g.lstm_step(xw, 0, 1, g.value(state), g.value(cell.w_h),
                           g.value(cell.b));
    nn::Tensor h = nn::Tensor::zeros(1, H), c = nn::Tensor::zeros(1, H);
    for (size_t u = 0; u < H; ++u) {
        h.at(0, u) = g.val(out).at(0, u);
        c.at(0, u) = g.val(out).at(1, u);
    }
    h.shape = {H};
    c.shape = {H};
    return {h, c};
}

nn::Tensor bilstm_forward(const nn::Tensor& seq,
                          const BiLstmLayerParamsT<float>& layer,
                          bool bidirectional) {
    if (seq.rows() == 0) {
        throw std::runtime_error("bilstm_forward: empty sequence");
    }
    nn::Graph g;

    auto run = [&](const LstmCellParamsT<float>& cell, bool reversed) {
        auto xw = g.matmul(g.value(seq), g.value(cell.w_x));
        return g.lstm_sequence(xw, g.value(cell.w_h), g.value(cell.b), 1,
                               reversed);
    };

    auto proj = g.matmul(run(layer.fwd, false), g.value(layer.combine_fwd));
    if (bidirectional) {
        proj = g.add(proj, g.matmul(run(layer.bwd, true),
                                    g.value(layer.combine_bwd)));
    }
    auto out = g.add(proj, g.value(layer.combine_bias));
    return g.val(out);
}

std::pair<nn::Tensor, nn::Tensor> attention_pool(const nn::Tensor& h,
                                                 const nn::Tensor& score_w) {
    if (h.rows() == 0) throw std::runtime_error("attention_pool: empty input");
    if (score_w.numel() != h.cols()) {
        throw std::runtime_error("attention_pool: score vector length " +
                                 std::to_string(score_w.numel()) +
                                 " vs hidden " + std::to_string(h.cols()));
    }
    const size_t Tn = h.rows();
    nn::Graph g;
    auto w = nn::Tensor::from_rows(h.cols(), 1, score_w.data);
    auto scores = g.matmul(g.tanh(g.value(h)), g.value(w));    // [T x 1]
    auto alpha = g.softmax_rows(g.transpose(scores));          // [1 x T]
    auto pooled = g.weighted_sum_rows(g.value(h), alpha);      // [1 x H]
    nn::Tensor y = g.val(pooled);
    y.shape = {y.cols()};
    nn::Tensor a = g.val(alpha);
    a.shape = {Tn};
    return {y, a};
}

BlendshapeFrame output_head(const nn::Tensor& pooled, const ModelParams& p) {
    nn::Graph g;
    auto y = g.value(nn::Tensor::from_rows(1, pooled.numel(), pooled.data));
    auto basis = g.tanh(g.add(g.matmul(y, g.value(p.dense1_w)),
                              g.value(p.dense1_b)));
    auto out = g.sigmoid(g.add(g.matmul(basis, g.value(p.dense2_w)),
                               g.value(p.dense2_b)));
    BlendshapeFrame frame;
    for (size_t j = 0; j < kBlendshapeDim; ++j) frame.params[j] = g.val(out).at(0, j);
    return frame;
}

BlendshapeFrame model_forward(const FeatureWindow& window, const ModelParams& p,
                              std::vector<float>* alpha_out) {
    if (window.coeffs.rows() != p.config.input_rows ||
        window.coeffs.cols() != p.config.input_cols) {
        throw std::runtime_error("model_forward: window shape " +
                                 window.coeffs.shape_str() + ", expected [" +
                                 std::to_string(p.config.input_rows) + "x" +
                                 std::to_string(p.config.input_cols) + "]");
    }
    nn::Tensor input = nn::Tensor::zeros(window.coeffs.rows(),
                                         window.coeffs.cols());
    for (size_t i = 0; i < input.numel(); ++i) {
        input.data[i] = static_cast<float>(window.coeffs.data[i]);
    }
    nn::Graph g;
    ModelGraph<float> mg = build_model_graph(g, p, input, 1, false);
    BlendshapeFrame frame;
    for (size_t j = 0; j < kBlendshapeDim; ++j) {
        frame.params[j] = g.val(mg.preds).at(0, j);
    }
    if (alpha_out != nullptr) {
        alpha_out->clear();
        if (mg.alpha >= 0) {
            const auto& a = g.val(mg.alpha);
            alpha_out->assign(a.data.begin(), a.data.end());
        }
    }
    return frame;
}

}  // namespace a2f
