// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "a2f/gradcheck.hpp"
#include "a2f/model.hpp"
#include "a2f/objectives.hpp"
#include "a2f/rng.hpp"

using namespace a2f;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.hidden_size = 6;
    cfg.basis_size = 8;
    cfg.input_rows = 5;
    cfg.input_cols = 4;
    return cfg;
}

nn::Tensor randn_f(size_t r, size_t c, Rng& rng, float std = 1.0f) {
    return nn::Tensor::randn(r, c, std, rng);
}

FeatureWindow random_window(const ModelConfig& cfg, Rng& rng) {
    FeatureWindow w;
    w.coeffs = nn::TensorT<double>::randn(cfg.input_rows, cfg.input_cols, 1.0,
                                          rng);
    return w;
}

}  // namespace

TEST_CASE("lstm cell with zero weights and state gives zero outputs") {
    LstmCellParamsT<float> cell;
    cell.w_x = nn::Tensor::zeros(3, 16);
    cell.w_h = nn::Tensor::zeros(4, 16);
    cell.b = nn::Tensor::zeros(1, 16);
    nn::Tensor x = nn::Tensor::zeros(1, 3);
    x.data = {0.5f, -0.25f, 1.0f};
    const auto [h, c] = lstm_cell_step(x, nn::Tensor::zeros(1, 4),
                                       nn::Tensor::zeros(1, 4), cell);
    for (float v : h.data) CHECK(v == 0.0f);
    for (float v : c.data) CHECK(v == 0.0f);
}

TEST_CASE("lstm cell hidden state is bounded") {
    Rng rng(41);
    LstmCellParamsT<float> cell;
    cell.w_x = randn_f(3, 20, rng, 2.0f);
    cell.w_h = randn_f(5, 20, rng, 2.0f);
    cell.b = randn_f(1, 20, rng, 2.0f);
    for (int trial = 0; trial < 25; ++trial) {
        const auto [h, c] = lstm_cell_step(randn_f(1, 3, rng, 3.0f),
                                           randn_f(1, 5, rng, 2.0f),
                                           randn_f(1, 5, rng, 2.0f), cell);
        for (float v : h.data) {
            CHECK(v > -1.0f);
            CHECK(v < 1.0f);
        }
    }
}

TEST_CASE("bilstm with zero parameters propagates zeros") {
    const size_t H = 4, d = 3, T = 6;
    BiLstmLayerParamsT<float> layer;
    layer.fwd = {nn::Tensor::zeros(d, 4 * H), nn::Tensor::zeros(H, 4 * H),
                 nn::Tensor::zeros(1, 4 * H)};
    layer.bwd = layer.fwd;
    layer.combine_fwd = nn::Tensor::zeros(H, H);
    layer.combine_bwd = nn::Tensor::zeros(H, H);
    layer.combine_bias = nn::Tensor::zeros(1, H);
    Rng rng(2);
    const nn::Tensor out = bilstm_forward(randn_f(T, d, rng), layer);
    REQUIRE(out.rows() == T);
    REQUIRE(out.cols() == H);
    for (float v : out.data) CHECK(v == 0.0f);
}

TEST_CASE("bilstm time-reversal symmetry") {
    Rng rng(43);
    const size_t H = 5, d = 3, T = 9;
    auto make_cell = [&]() {
        return LstmCellParamsT<float>{randn_f(d, 4 * H, rng, 0.6f),
                                      randn_f(H, 4 * H, rng, 0.6f),
                                      randn_f(1, 4 * H, rng, 0.3f)};
    };
    BiLstmLayerParamsT<float> layer;
    layer.fwd = make_cell();
    layer.bwd = make_cell();
    layer.combine_fwd = randn_f(H, H, rng, 0.5f);
    layer.combine_bwd = randn_f(H, H, rng, 0.5f);
    layer.combine_bias = randn_f(1, H, rng, 0.5f);

    const nn::Tensor seq = randn_f(T, d, rng);
    nn::Tensor rev = seq;
    for (size_t t = 0; t < T; ++t) {
        for (size_t j = 0; j < d; ++j) rev.at(t, j) = seq.at(T - 1 - t, j);
    }
    BiLstmLayerParamsT<float> swapped = layer;
    std::swap(swapped.fwd, swapped.bwd);
    std::swap(swapped.combine_fwd, swapped.combine_bwd);

    const nn::Tensor a = bilstm_forward(seq, layer);
    const nn::Tensor b = bilstm_forward(rev, swapped);
    for (size_t t = 0; t < T; ++t) {
        for (size_t j = 0; j < H; ++j) {
            REQUIRE(std::abs(a.at(t, j) - b.at(T - 1 - t, j)) < 1e-6f);
        }
    }
}

TEST_CASE("bilstm T=1 equals a hand-composed single step") {
    Rng rng(47);
    const size_t H = 4, d = 3;
    auto make_cell = [&]() {
        return LstmCellParamsT<float>{randn_f(d, 4 * H, rng, 0.6f),
                                      randn_f(H, 4 * H, rng, 0.6f),
                                      randn_f(1, 4 * H, rng, 0.3f)};
    };
    BiLstmLayerParamsT<float> layer;
    layer.fwd = make_cell();
    layer.bwd = make_cell();
    layer.combine_fwd = randn_f(H, H, rng, 0.5f);
    layer.combine_bwd = randn_f(H, H, rng, 0.5f);
    layer.combine_bias = randn_f(1, H, rng, 0.5f);

    const nn::Tensor x = randn_f(1, d, rng);
    const nn::Tensor out = bilstm_forward(x, layer);
    REQUIRE(out.rows() == 1);

    const nn::Tensor zero = nn::Tensor::zeros(1, H);
    const auto [hf, cf] = lstm_cell_step(x, zero, zero, layer.fwd);
    const auto [hb, cb] = lstm_cell_step(x, zero, zero, layer.bwd);
    for (size_t j = 0; j < H; ++j) {
        double acc = layer.combine_bias.at(0, j);
        for (size_t k = 0; k < H; ++k) {
            acc += static_cast<double>(hf.data[k]) * layer.combine_fwd.at(k, j) +
                   static_cast<double>(hb.data[k]) * layer.combine_bwd.at(k, j);
        }
        CHECK(out.at(0, j) == doctest::Approx(acc).epsilon(1e-5));
    }
}

TEST_CASE("bilstm rejects an empty sequence") {
    BiLstmLayerParamsT<float> layer;
    layer.combine_fwd = nn::Tensor::zeros(2, 2);
    CHECK_THROWS_AS(bilstm_forward(nn::Tensor{}, layer), std::runtime_error);
}

TEST_CASE("attention pooling") {
    Rng rng(53);
    const size_t H = 6;

    SUBCASE("T=1 passes through exactly") {
        const nn::Tensor h = randn_f(1, H, rng);
        const auto [y, alpha] = attention_pool(h, randn_f(H, 1, rng));
        REQUIRE(alpha.numel() == 1);
        CHECK(alpha.data[0] == 1.0f);
        for (size_t j = 0; j < H; ++j) REQUIRE(y.data[j] == h.at(0, j));
    }

    SUBCASE("identical rows give uniform weights and pass the row through") {
        const size_t T = 8;
        nn::Tensor h = nn::Tensor::zeros(T, H);
        const nn::Tensor row = randn_f(1, H, rng);
        for (size_t t = 0; t < T; ++t) {
            for (size_t j = 0; j < H; ++j) h.at(t, j) = row.at(0, j);
        }
        const auto [y, alpha] = attention_pool(h, randn_f(H, 1, rng));
        for (size_t t = 0; t < T; ++t) {
            CHECK(alpha.data[t] == doctest::Approx(1.0 / T).epsilon(1e-6));
        }
        for (size_t j = 0; j < H; ++j) {
            CHECK(y.data[j] == doctest::Approx(row.at(0, j)).epsilon(1e-6));
        }
    }

    SUBCASE("zero score vector averages the rows") {
        const size_t T = 5;
        const nn::Tensor h = randn_f(T, H, rng);
        const auto [y, alpha] = attention_pool(h, nn::Tensor::zeros(H, 1));
        for (size_t t = 0; t < T; ++t) {
            CHECK(alpha.data[t] == doctest::Approx(0.2).epsilon(1e-6));
        }
        for (size_t j = 0; j < H; ++j) {
            double mean = 0.0;
            for (size_t t = 0; t < T; ++t) mean += h.at(t, j);
            mean /= T;
            CHECK(y.data[j] == doctest::Approx(mean).epsilon(1e-5));
        }
    }
}

TEST_CASE("output head clamps to (0,1) and zero weights give 0.5") {
    ModelConfig cfg = tiny_config();
    ModelParams p = init_model(cfg, 7);
    p.dense2_w = nn::Tensor::zeros(cfg.basis_size, kBlendshapeDim);
    p.dense2_b = nn::Tensor::zeros(1, kBlendshapeDim);
    Rng rng(3);
    const BlendshapeFrame f = output_head(randn_f(1, cfg.hidden_size, rng), p);
    for (float v : f.params) CHECK(v == 0.5f);
}

TEST_CASE("model forward basics") {
    ModelConfig cfg = tiny_config();
    const ModelParams p = init_model(cfg, 11);
    Rng rng(5);
    const FeatureWindow w = random_window(cfg, rng);

    std::vector<float> alpha;
    const BlendshapeFrame f = model_forward(w, p, &alpha);
    for (float v : f.params) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
    REQUIRE(alpha.size() == cfg.input_rows);
    double sum = 0.0;
    for (float a : alpha) {
        CHECK(a > 0.0f);
        CHECK(a < 1.0f);
        sum += a;
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);

    // Bit-identical on repeat evaluation.
    std::vector<float> alpha2;
    const BlendshapeFrame f2 = model_forward(w, p, &alpha2);
    CHECK(f.params == f2.params);
    CHECK(alpha == alpha2);

    FeatureWindow bad;
    bad.coeffs = nn::TensorT<double>::zeros(3, 3);
    CHECK_THROWS_WITH_AS(model_forward(bad, p), doctest::Contains("shape"),
                         std::runtime_error);
}

TEST_CASE("model forward composes from the single-sample ops") {
    ModelConfig cfg = tiny_config();
    Rng rng(9);

    SUBCASE("attention pipeline") {
        const ModelParams p = init_model(cfg, 21);
        const FeatureWindow w = random_window(cfg, rng);
        nn::Tensor input = nn::Tensor::zeros(cfg.input_rows, cfg.input_cols);
        for (size_t i = 0; i < input.numel(); ++i) {
            input.data[i] = static_cast<float>(w.coeffs.data[i]);
        }
        const nn::Tensor h1 = bilstm_forward(input, p.layer1);
        const nn::Tensor h2 = bilstm_forward(h1, p.layer2);
        const auto [y, alpha] = attention_pool(h2, p.attention_w);
        const BlendshapeFrame via_ops = output_head(y, p);
        const BlendshapeFrame direct = model_forward(w, p);
        for (size_t j = 0; j < kBlendshapeDim; ++j) {
            REQUIRE(via_ops.params[j] ==
                    doctest::Approx(direct.params[j]).epsilon(1e-6));
        }
    }

    SUBCASE("no attention pools the last timestep") {
        ModelConfig cfg2 = tiny_config();
        cfg2.use_attention = false;
        const ModelParams p = init_model(cfg2, 22);
        const FeatureWindow w = random_window(cfg2, rng);
        nn::Tensor input = nn::Tensor::zeros(cfg2.input_rows, cfg2.input_cols);
        for (size_t i = 0; i < input.numel(); ++i) {
            input.data[i] = static_cast<float>(w.coeffs.data[i]);
        }
        const nn::Tensor h2 =
            bilstm_forward(bilstm_forward(input, p.layer1), p.layer2);
        nn::Tensor last = nn::Tensor::zeros(1, cfg2.hidden_size);
        for (size_t j = 0; j < cfg2.hidden_size; ++j) {
            last.at(0, j) = h2.at(cfg2.input_rows - 1, j);
        }
        const BlendshapeFrame via_ops = output_head(last, p);
        std::vector<float> alpha;
        const BlendshapeFrame direct = model_forward(w, p, &alpha);
        CHECK(alpha.empty());
        for (size_t j = 0; j < kBlendshapeDim; ++j) {
            REQUIRE(via_ops.params[j] ==
                    doctest::Approx(direct.params[j]).epsilon(1e-6));
        }
    }

    SUBCASE("unidirectional skips the backward cells") {
        ModelConfig cfg2 = tiny_config();
        cfg2.bidirectional = false;
        const ModelParams p = init_model(cfg2, 23);
        const FeatureWindow w = random_window(cfg2, rng);
        nn::Tensor input = nn::Tensor::zeros(cfg2.input_rows, cfg2.input_cols);
        for (size_t i = 0; i < input.numel(); ++i) {
            input.data[i] = static_cast<float>(w.coeffs.data[i]);
        }
        const nn::Tensor h2 = bilstm_forward(
            bilstm_forward(input, p.layer1, false), p.layer2, false);
        const auto [y, alpha] = attention_pool(h2, p.attention_w);
        const BlendshapeFrame via_ops = output_head(y, p);
        const BlendshapeFrame direct = model_forward(w, p);
        for (size_t j = 0; j < kBlendshapeDim; ++j) {
            REQUIRE(via_ops.params[j] ==
                    doctest::Approx(direct.params[j]).epsilon(1e-6));
        }
    }
}

TEST_CASE("batched forward is bit-identical to per-window forward") {
    ModelConfig cfg = tiny_config();
    const ModelParams p = init_model(cfg, 31);
    Rng rng(15);
    const size_t B = 3;
    std::vector<FeatureWindow> windows;
    for (size_t b = 0; b < B; ++b) windows.push_back(random_window(cfg, rng));

    nn::Tensor input = nn::Tensor::zeros(cfg.input_rows * B, cfg.input_cols);
    for (size_t t = 0; t < cfg.input_rows; ++t) {
        for (size_t b = 0; b < B; ++b) {
            for (size_t c = 0; c < cfg.input_cols; ++c) {
                input.at(t * B + b, c) =
                    static_cast<float>(windows[b].coeffs.at(t, c));
            }
        }
    }
    nn::Graph g;
    const ModelGraph<float> mg = build_model_graph(g, p, input, B, false);
    const nn::Tensor& preds = g.val(mg.preds);
    for (size_t b = 0; b < B; ++b) {
        const BlendshapeFrame f = model_forward(windows[b], p);
        for (size_t j = 0; j < kBlendshapeDim; ++j) {
            REQUIRE(preds.at(b, j) == f.params[j]);
        }
    }
}

TEST_CASE("every parameter receives a gradient") {
    ModelConfig cfg = tiny_config();
    const ModelParams p = init_model(cfg, 77);
    Rng rng(19);
    const size_t B = 4;
    nn::Tensor input = randn_f(cfg.input_rows * B, cfg.input_cols, rng);
    nn::Tensor targets = nn::Tensor::zeros(B, kBlendshapeDim);
    for (auto& v : targets.data) v = static_cast<float>(rng.uniform());

    nn::Graph g;
    const ModelGraph<float> mg = build_model_graph(g, p, input, B, true);
    const LossNodes<float> loss = build_total_loss(
        g, mg.preds, g.value(targets), {{0, B}}, LossConfig{});
    g.backward(loss.total);

    size_t tensor_count = 0;
    p.visit([&](const std::string&, const nn::Tensor&) { ++tensor_count; });
    REQUIRE(mg.params.size() == tensor_count);

    for (const auto& [name, id] : mg.params) {
        REQUIRE(g.has_grad(id));
        double norm = 0.0;
        for (float v : g.grad_of(id).data) {
            norm += static_cast<double>(v) * v;
        }
        INFO("parameter ", name);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("full tiny model passes finite differences") {
    ModelConfig cfg;
    cfg.hidden_size = 4;
    cfg.basis_size = 6;
    cfg.input_rows = 5;
    cfg.input_cols = 3;
    ModelParamsT<double> p = cast_params<double>(init_model(cfg, 99));

    Rng rng(23);
    const size_t B = 2;
    nn::TensorT<double> input =
        nn::TensorT<double>::randn(cfg.input_rows * B, cfg.input_cols, 1.0, rng);
    nn::TensorT<double> targets = nn::TensorT<double>::zeros(B, kBlendshapeDim);
    for (auto& v : targets.data) v = rng.uniform();

    nn::ParamSet params;
    p.visit([&](const std::string& name, nn::TensorT<double>& t) {
        params.emplace_back(name, &t);
    });
    LossConfig lcfg;  // w2=0.5 exercises the smooth path
    auto build = [&](nn::GraphT<double>& g) {
        nn::BuiltLoss bl;
        const ModelGraph<double> mg = build_model_graph(g, p, input, B, true);
        const LossNodes<double> loss =
            build_total_loss(g, mg.preds, g.value(targets), {{0, B}}, lcfg);
        bl.loss = loss.total;
        // Align with the ParamSet (visit) order by name.
        for (const auto& [name, ptr] : params) {
            for (const auto& [reg_name, id] : mg.params) {
                if (reg_name == name) bl.params.push_back(id);
            }
        }
        return bl;
    };
    const auto report = nn::gradient_check(params, build, 1e-3);
    INFO("worst ", report.worst_param, "[", report.worst_index, "] rel ",
         report.worst_rel);
    CHECK(report.pass);
}
