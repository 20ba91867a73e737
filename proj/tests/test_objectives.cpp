// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "a2f/gradcheck.hpp"
#include "a2f/objectives.hpp"
#include "a2f/rng.hpp"

using namespace a2f;

namespace {

BlendshapeFrame constant_frame(float v) {
    BlendshapeFrame f;
    f.params.fill(v);
    return f;
}

BlendshapeFrame random_frame(Rng& rng) {
    BlendshapeFrame f;
    for (auto& v : f.params) v = static_cast<float>(rng.uniform());
    return f;
}

}  // namespace

TEST_CASE("huber hand values") {
    const BlendshapeFrame zero = constant_frame(0.0f);

    // e = 0 everywhere.
    CHECK(huber(zero, zero, 1.0) == 0.0);

    // e = 0.5 on every component: 0.5 * 0.25 = 0.125 each.
    CHECK(huber(constant_frame(0.5f), zero, 1.0) ==
          doctest::Approx(0.125).epsilon(1e-12));

    // e = 2: linear branch, 2*1 - 0.5 = 1.5 each.
    CHECK(huber(constant_frame(2.0f), zero, 1.0) ==
          doctest::Approx(1.5).epsilon(1e-9));

    // Knee continuity at |e| = delta.
    CHECK(huber(constant_frame(1.0f), zero, 1.0) ==
          doctest::Approx(0.5).epsilon(1e-9));

    // Single nonzero component contributes value/51.
    BlendshapeFrame one;
    one.params.fill(0.0f);
    one.params[7] = 0.5f;
    CHECK(huber(one, zero, 1.0) == doctest::Approx(0.125 / 51.0).epsilon(1e-9));
}

TEST_CASE("huber is nonnegative, quadratic inside, linear outside") {
    Rng rng(5);
    const BlendshapeFrame zero = constant_frame(0.0f);
    for (int trial = 0; trial < 50; ++trial) {
        const BlendshapeFrame a = random_frame(rng);
        const BlendshapeFrame b = random_frame(rng);
        const double h = huber(a, b, 1.0);
        CHECK(h >= 0.0);
        // Inside delta the value is exactly half the mean squared error.
        double mse = 0.0;
        for (size_t j = 0; j < kBlendshapeDim; ++j) {
            const double e = static_cast<double>(a.params[j]) -
                             static_cast<double>(b.params[j]);
            mse += e * e;
        }
        mse /= kBlendshapeDim;
        CHECK(h == doctest::Approx(0.5 * mse).epsilon(1e-9));
    }
    // Linear growth beyond the threshold.
    const double h4 = huber(constant_frame(4.0f), zero, 1.0);
    const double h5 = huber(constant_frame(5.0f), zero, 1.0);
    CHECK(h5 - h4 == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("smooth loss hand values") {
    BlendshapeFrame a = constant_frame(0.0f);
    BlendshapeFrame b = constant_frame(0.0f);

    // Identical nonzero vectors.
    a.params.fill(0.3f);
    CHECK(smooth_loss(a, a) == doctest::Approx(0.0).epsilon(1e-9));

    // Orthogonal vectors.
    a.params.fill(0.0f);
    b.params.fill(0.0f);
    a.params[0] = 1.0f;
    b.params[1] = 1.0f;
    CHECK(smooth_loss(a, b) == doctest::Approx(1.0).epsilon(1e-9));

    // (1,0,...) vs (1,1,0,...)/||.||: 1 - sqrt(2)/2.
    b.params.fill(0.0f);
    b.params[0] = 1.0f;
    b.params[1] = 1.0f;
    CHECK(smooth_loss(a, b) ==
          doctest::Approx(1.0 - std::sqrt(2.0) / 2.0).epsilon(1e-7));
    CHECK(smooth_loss(a, b) == doctest::Approx(0.29289).epsilon(1e-4));

    // Zero-norm flags the degenerate pair.
    bool degenerate = false;
    CHECK(smooth_loss(constant_frame(0.0f), a, &degenerate) == 0.0);
    CHECK(degenerate);
}

TEST_CASE("smooth loss symmetry and scale invariance") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const BlendshapeFrame a = random_frame(rng);
        const BlendshapeFrame b = random_frame(rng);
        CHECK(smooth_loss(a, b) == doctest::Approx(smooth_loss(b, a)));
        BlendshapeFrame scaled = a;
        const float gain = static_cast<float>(rng.uniform(0.1, 5.0));
        for (auto& v : scaled.params) v *= gain;
        CHECK(smooth_loss(scaled, b) ==
              doctest::Approx(smooth_loss(a, b)).epsilon(1e-5));
        // Nonnegative vectors keep the cosine in [0,1].
        const double s = smooth_loss(a, b);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
}

TEST_CASE("total loss composition") {
    Rng rng(11);
    LossConfig cfg;
    cfg.w1 = 0.8;
    cfg.w2 = 0.3;

    std::vector<BlendshapeFrame> preds, targets;
    for (int i = 0; i < 6; ++i) {
        preds.push_back(random_frame(rng));
        targets.push_back(random_frame(rng));
    }
    const LossReport r = total_loss(preds, targets, cfg);
    CHECK(std::abs(r.total - (cfg.w1 * r.target_term + cfg.w2 * r.smooth_term)) <
          1e-9);

    SUBCASE("w2 = 0 reduces to mean Huber") {
        cfg.w1 = 1.0;
        cfg.w2 = 0.0;
        const LossReport r2 = total_loss(preds, targets, cfg);
        double mean = 0.0;
        for (size_t i = 0; i < preds.size(); ++i) {
            mean += huber(targets[i], preds[i], cfg.delta);
        }
        mean /= static_cast<double>(preds.size());
        CHECK(r2.total == doctest::Approx(mean).epsilon(1e-9));
    }

    SUBCASE("n = 1 has no smooth term") {
        const LossReport r1 = total_loss({preds[0]}, {targets[0]}, cfg);
        CHECK(r1.smooth_term == 0.0);
    }

    SUBCASE("constant predictions with w1 = 0 cost nothing") {
        cfg.w1 = 0.0;
        cfg.w2 = 1.0;
        std::vector<BlendshapeFrame> flat(5, constant_frame(0.4f));
        const LossReport r3 = total_loss(flat, flat, cfg);
        CHECK(r3.total == doctest::Approx(0.0).epsilon(1e-9));
    }

    SUBCASE("length mismatch and empty input are errors") {
        CHECK_THROWS_AS(total_loss(preds, {targets[0]}, cfg), std::runtime_error);
        CHECK_THROWS_AS(total_loss({}, {}, cfg), std::runtime_error);
    }
}

TEST_CASE("graph loss matches the plain functions") {
    Rng rng(13);
    LossConfig cfg;
    const size_t n = 7;
    std::vector<BlendshapeFrame> preds, targets;
    nn::TensorT<double> pred_t = nn::TensorT<double>::zeros(n, kBlendshapeDim);
    nn::TensorT<double> targ_t = nn::TensorT<double>::zeros(n, kBlendshapeDim);
    for (size_t i = 0; i < n; ++i) {
        preds.push_back(random_frame(rng));
        targets.push_back(random_frame(rng));
        for (size_t j = 0; j < kBlendshapeDim; ++j) {
            pred_t.at(i, j) = preds[i].params[j];
            targ_t.at(i, j) = targets[i].params[j];
        }
    }
    nn::GraphT<double> g;
    const LossNodes<double> nodes = build_total_loss(
        g, g.value(pred_t), g.value(targ_t), {{0, n}}, cfg);
    const LossReport want = total_loss(preds, targets, cfg);
    CHECK(g.val(nodes.target_term).scalar() ==
          doctest::Approx(want.target_term).epsilon(1e-9));
    CHECK(g.val(nodes.smooth_term).scalar() ==
          doctest::Approx(want.smooth_term).epsilon(1e-9));
    CHECK(g.val(nodes.total).scalar() ==
          doctest::Approx(want.total).epsilon(1e-9));
}

TEST_CASE("graph loss gradient passes finite differences") {
    Rng rng(17);
    const size_t n = 5;
    nn::TensorT<double> preds =
        nn::TensorT<double>::randn(n, kBlendshapeDim, 0.3, rng);
    for (auto& v : preds.data) v += 0.5;
    nn::TensorT<double> targets = nn::TensorT<double>::zeros(n, kBlendshapeDim);
    for (auto& v : targets.data) v = rng.uniform();

    LossConfig cfg;
    auto build = [&](nn::GraphT<double>& g) {
        nn::BuiltLoss bl;
        auto p = g.param(preds);
        bl.params = {p};
        // Two chunks, one with a single frame (no pairs).
        const LossNodes<double> nodes = build_total_loss(
            g, p, g.value(targets), {{0, 4}, {4, 1}}, cfg);
        bl.loss = nodes.total;
        return bl;
    };
    const auto report = nn::gradient_check({{"preds", &preds}}, build, 1e-3);
    INFO("worst rel ", report.worst_rel);
    CHECK(report.pass);
}

TEST_CASE("rmse") {
    Rng rng(19);
    AnimTrack a, b;
    for (int i = 0; i < 20; ++i) {
        a.frames.push_back(random_frame(rng));
        b.frames.push_back(a.frames.back());
    }
    CHECK(rmse(a, b) == 0.0);

    // Constant offset of 0.1 on every component.
    AnimTrack c = a;
    for (auto& f : c.frames) {
        for (auto& v : f.params) v += 0.1f;
    }
    CHECK(rmse(c, a) == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(rmse(a, c) == doctest::Approx(rmse(c, a)).epsilon(1e-12));

    AnimTrack short_track;
    short_track.frames.push_back(a.frames[0]);
    CHECK_THROWS_WITH_AS(rmse(a, short_track), doctest::Contains("mismatch"),
                         std::runtime_error);

    // Format note: reported with 4 decimals by the CLI.
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.4f", 0.28830001);
    CHECK(std::string(buf) == "0.2883");
}

TEST_CASE("jitter") {
    AnimTrack flat;
    for (int i = 0; i < 10; ++i) flat.frames.push_back(constant_frame(0.7f));
    CHECK(jitter(flat) == 0.0);

    // Alternating 0/1 on one component.
    AnimTrack alt;
    for (int i = 0; i < 10; ++i) {
        BlendshapeFrame f = constant_frame(0.0f);
        f.params[3] = (i % 2 == 0) ? 0.0f : 1.0f;
        alt.frames.push_back(f);
    }
    CHECK(jitter(alt) == doctest::Approx(1.0 / 51.0).epsilon(1e-9));

    // Smooth ramp over 101 frames: each delta is 0.01.
    AnimTrack ramp;
    for (int i = 0; i <= 100; ++i) {
        BlendshapeFrame f = constant_frame(0.0f);
        f.params[0] = static_cast<float>(i) / 100.0f;
        ramp.frames.push_back(f);
    }
    CHECK(jitter(ramp) == doctest::Approx(0.01 / 51.0).epsilon(1e-6));

    AnimTrack one;
    one.frames.push_back(constant_frame(0.0f));
    CHECK_THROWS_AS(jitter(one), std::runtime_error);
}

TEST_CASE("loss config validation") {
    LossConfig cfg;
    cfg.delta = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
    cfg = LossConfig{};
    cfg.w1 = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
}
