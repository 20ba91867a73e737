// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "a2f/inference.hpp"
#include "a2f/rng.hpp"

using namespace a2f;

namespace {

std::string tmp_path(const std::string& name) {
    return "/tmp/a2f_inference_" + name;
}

// Random-weight checkpoint over a real feature pipeline.
Checkpoint random_checkpoint(size_t hidden, uint64_t seed) {
    ModelConfig mc;
    mc.hidden_size = hidden;
    mc.basis_size = 24;
    Checkpoint ckpt;
    ckpt.params = init_model(mc, seed);
    ckpt.feature_cfg = FeatureConfig{};
    ckpt.normalizer = Normalizer::identity(39);
    Rng rng(seed + 1);
    for (auto& v : ckpt.normalizer.mean) {
        v = static_cast<float>(rng.normal() * 10.0);
    }
    for (auto& v : ckpt.normalizer.std) {
        v = static_cast<float>(1.0 + rng.uniform() * 20.0);
    }
    return ckpt;
}

bool tracks_equal(const AnimTrack& a, const AnimTrack& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a.frames[i].params != b.frames[i].params) return false;
    }
    return true;
}

AnimTrack zero_track(size_t frames) {
    AnimTrack t;
    t.frames.resize(frames);
    for (auto& f : t.frames) f.params.fill(0.0f);
    return t;
}

}  // namespace

TEST_CASE("offline inference basics") {
    const Checkpoint ckpt = random_checkpoint(10, 3);
    const SynthResult synth = synth_generate(17, 2.0);

    const AnimTrack track = infer_track(synth.clip, ckpt);
    CHECK(track.size() == 60);  // 2 s at 30 FPS
    for (const auto& f : track.frames) {
        for (float v : f.params) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    const AnimTrack again = infer_track(synth.clip, ckpt);
    CHECK(tracks_equal(track, again));
}

TEST_CASE("stream output is identical regardless of chunking") {
    const Checkpoint ckpt = random_checkpoint(8, 5);
    const SynthResult synth = synth_generate(23, 3.0);
    const AnimTrack offline = infer_track(synth.clip, ckpt);

    Rng rng(9);
    for (int trial = 0; trial < 3; ++trial) {
        StreamInferencer engine(ckpt);
        AnimTrack streamed;
        size_t pos = 0;
        BlendshapeFrame frame;
        while (pos < synth.clip.n_samples()) {
            const size_t n = std::min<size_t>(
                1 + rng.uniform_index(5000), synth.clip.n_samples() - pos);
            engine.push(synth.clip.samples.data() + pos, n);
            pos += n;
            while (engine.pop(&frame)) streamed.frames.push_back(frame);
        }
        engine.finish();
        while (engine.pop(&frame)) streamed.frames.push_back(frame);
        REQUIRE(tracks_equal(offline, streamed));
    }
}

TEST_CASE("stream_infer delivers ordered frames and the lookahead constant") {
    const Checkpoint ckpt = random_checkpoint(8, 7);
    const SynthResult synth = synth_generate(29, 2.0);
    const AnimTrack offline = infer_track(synth.clip, ckpt);

    size_t pos = 0;
    AudioSource source = [&](float* buf, size_t max) -> size_t {
        const size_t n = std::min<size_t>(
            std::min(max, kSamplesPerVideoFrame), synth.clip.n_samples() - pos);
        std::copy(synth.clip.samples.begin() + static_cast<long>(pos),
                  synth.clip.samples.begin() + static_cast<long>(pos + n), buf);
        pos += n;
        return n;
    };
    std::vector<size_t> order;
    AnimTrack streamed;
    FrameSink sink = [&](size_t idx, const BlendshapeFrame& f) {
        order.push_back(idx);
        streamed.frames.push_back(f);
    };
    const LatencyReport report = stream_infer(source, ckpt, sink);

    CHECK(tracks_equal(offline, streamed));
    for (size_t i = 0; i < order.size(); ++i) REQUIRE(order[i] == i);
    CHECK(report.lookahead_s == doctest::Approx(47040.0 / 44100.0)
                                    .epsilon(1e-12));
    CHECK(report.lookahead_s == doctest::Approx(1.0667).epsilon(1e-3));
    CHECK(report.windows() == streamed.size());
    CHECK(report.mean_total_ms() <= report.max_total_ms());
}

TEST_CASE("early frames are not emitted before their window completes") {
    const Checkpoint ckpt = random_checkpoint(8, 11);
    const SynthResult synth = synth_generate(31, 2.0);
    StreamInferencer engine(ckpt);
    BlendshapeFrame frame;

    // One frame of audio is far short of the 48510-sample requirement.
    engine.push(synth.clip.samples.data(), kSamplesPerVideoFrame);
    CHECK_FALSE(engine.pop(&frame));

    // Frame 0 completes exactly at 1470 + 47040 samples.
    engine.push(synth.clip.samples.data() + kSamplesPerVideoFrame,
                kContextSamples - 1);
    CHECK_FALSE(engine.pop(&frame));
    engine.push(synth.clip.samples.data() + kSamplesPerVideoFrame +
                    kContextSamples - 1, 1);
    CHECK(engine.pop(&frame));
    CHECK(engine.frames_emitted() == 1);
}

TEST_CASE("blink injection") {
    BlinkConfig cfg;
    cfg.period_jitter = 0.0;

    SUBCASE("pulses start every 120 frames with jitter off") {
        const AnimTrack track = zero_track(400);
        const AnimTrack out = blink_inject(track, cfg, 1);
        // Triangular pulse of 6 frames starting at 120 and 240.
        const float third = 1.0f / 3.0f;
        for (size_t start : {size_t{120}, size_t{240}, size_t{360}}) {
            CHECK(out.frames[start - 1].params[0] == 0.0f);
            CHECK(out.frames[start].params[0] == doctest::Approx(third));
            CHECK(out.frames[start + 1].params[0] ==
                  doctest::Approx(2.0f * third));
            CHECK(out.frames[start + 2].params[0] == doctest::Approx(1.0f));
            CHECK(out.frames[start + 3].params[0] == doctest::Approx(1.0f));
            CHECK(out.frames[start + 4].params[0] ==
                  doctest::Approx(2.0f * third));
            CHECK(out.frames[start + 5].params[0] == doctest::Approx(third));
            if (start + 6 < out.size()) {
                CHECK(out.frames[start + 6].params[0] == 0.0f);
            }
        }
        // Second blink parameter gets the same pulse.
        CHECK(out.frames[122].params[1] == doctest::Approx(1.0f));
    }

    SUBCASE("non-blink parameters are untouched") {
        Rng rng(3);
        AnimTrack track = zero_track(300);
        for (auto& f : track.frames) {
            for (auto& v : f.params) v = static_cast<float>(rng.uniform());
        }
        const AnimTrack out = blink_inject(track, cfg, 1);
        REQUIRE(out.size() == track.size());
        for (size_t i = 0; i < track.size(); ++i) {
            for (size_t j = 2; j < kBlendshapeDim; ++j) {
                REQUIRE(out.frames[i].params[j] == track.frames[i].params[j]);
            }
        }
    }

    SUBCASE("zero amplitude is the identity") {
        Rng rng(5);
        AnimTrack track = zero_track(300);
        for (auto& f : track.frames) {
            for (auto& v : f.params) v = static_cast<float>(rng.uniform());
        }
        BlinkConfig silent = cfg;
        silent.amplitude = 0.0f;
        const AnimTrack out = blink_inject(track, silent, 1);
        CHECK(tracks_equal(out, track));
    }

    SUBCASE("jittered periods stay within ten percent") {
        BlinkConfig jittered;  // default 0.1 jitter
        const AnimTrack out = blink_inject(zero_track(3000), jittered, 42);
        std::vector<size_t> starts;
        for (size_t i = 1; i < out.size(); ++i) {
            if (out.frames[i].params[0] > 0.0f &&
                out.frames[i - 1].params[0] == 0.0f) {
                starts.push_back(i);
            }
        }
        REQUIRE(starts.size() >= 10);
        for (size_t k = 1; k < starts.size(); ++k) {
            const double gap = static_cast<double>(starts[k] - starts[k - 1]);
            CHECK(gap >= 120.0 * 0.9 - 6.0);
            CHECK(gap <= 120.0 * 1.1 + 6.0);
        }
    }

    SUBCASE("bad indices are rejected") {
        BlinkConfig bad;
        bad.blink_indices = {0};
        CHECK_THROWS_AS(blink_inject(zero_track(10), bad, 1),
                        std::runtime_error);
        bad.blink_indices = {52};
        CHECK_THROWS_AS(blink_inject(zero_track(10), bad, 1),
                        std::runtime_error);
    }
}

TEST_CASE("retargeting") {
    Rng rng(7);
    AnimTrack track = zero_track(20);
    for (auto& f : track.frames) {
        for (auto& v : f.params) v = static_cast<float>(rng.uniform());
    }

    SUBCASE("identity map reproduces the native-scale track") {
        RigMap map;
        map.target_dim = kBlendshapeDim;
        map.matrix = nn::Tensor::zeros(51, 51);
        for (size_t j = 0; j < 51; ++j) map.matrix.at(j, j) = 1.0f;
        map.offset.assign(51, 0.0f);
        const RetargetedTrack out = retarget(track, map);
        REQUIRE(out.dim == 51);
        REQUIRE(out.frames.size() == 20);
        for (size_t i = 0; i < 20; ++i) {
            for (size_t j = 0; j < 51; ++j) {
                CHECK(out.frames[i][j] ==
                      doctest::Approx(track.frames[i].params[j] * 100.0f)
                          .epsilon(1e-5));
            }
        }
    }

    SUBCASE("zero matrix with offset 50 maps everything to 50") {
        RigMap map;
        map.target_dim = 3;
        map.matrix = nn::Tensor::zeros(3, 51);
        map.offset.assign(3, 50.0f);
        const RetargetedTrack out = retarget(track, map);
        for (const auto& f : out.frames) {
            for (float v : f) CHECK(v == 50.0f);
        }
    }

    SUBCASE("offset 200 clamps to 100") {
        RigMap map;
        map.target_dim = 2;
        map.matrix = nn::Tensor::zeros(2, 51);
        map.offset.assign(2, 200.0f);
        const RetargetedTrack out = retarget(track, map);
        for (const auto& f : out.frames) {
            for (float v : f) CHECK(v == 100.0f);
        }
    }

    SUBCASE("away from the clamps the map is exactly affine") {
        RigMap map;
        map.target_dim = 5;
        map.matrix = nn::Tensor::randn(5, 51, 0.01f, rng);
        map.offset.assign(5, 40.0f);
        const RetargetedTrack out = retarget(track, map);
        for (size_t i = 0; i < track.size(); ++i) {
            for (size_t r = 0; r < 5; ++r) {
                double want = map.offset[r];
                for (size_t c = 0; c < 51; ++c) {
                    want += static_cast<double>(map.matrix.at(r, c)) *
                            (static_cast<double>(track.frames[i].params[c]) *
                             100.0);
                }
                REQUIRE(want > 0.0);
                REQUIRE(want < 100.0);
                REQUIRE(out.frames[i][r] ==
                        doctest::Approx(want).epsilon(1e-6));
            }
        }
        // Doubling the linear part doubles the deviation from the offset.
        RigMap doubled = map;
        for (auto& v : doubled.matrix.data) v *= 2.0f;
        const RetargetedTrack out2 = retarget(track, doubled);
        for (size_t i = 0; i < track.size(); ++i) {
            for (size_t r = 0; r < 5; ++r) {
                CHECK(out2.frames[i][r] - map.offset[r] ==
                      doctest::Approx(2.0 * (out.frames[i][r] - map.offset[r]))
                          .epsilon(1e-4));
            }
        }
    }

    SUBCASE("rig map file round trip") {
        RigMap map;
        map.target_dim = 4;
        map.matrix = nn::Tensor::randn(4, 51, 0.5f, rng);
        map.offset = {1.0f, -2.0f, 3.0f, 4.5f};
        save_rigmap(tmp_path("map.csv"), map);
        const RigMap loaded = load_rigmap(tmp_path("map.csv"));
        REQUIRE(loaded.target_dim == 4);
        for (size_t r = 0; r < 4; ++r) {
            for (size_t c = 0; c < 51; ++c) {
                CHECK(loaded.matrix.at(r, c) ==
                      doctest::Approx(map.matrix.at(r, c)).epsilon(1e-5));
            }
            CHECK(loaded.offset[r] == doctest::Approx(map.offset[r]));
        }

        std::ofstream bad(tmp_path("bad_map.csv"));
        bad << "2\n1.0,2.0\n";
        bad.close();
        CHECK_THROWS_AS(load_rigmap(tmp_path("bad_map.csv")),
                        std::runtime_error);
    }
}

TEST_CASE("retargeted csv layout") {
    AnimTrack track = zero_track(2);
    track.frames[1].params.fill(0.5f);
    RigMap map;
    map.target_dim = 2;
    map.matrix = nn::Tensor::zeros(2, 51);
    map.matrix.at(0, 0) = 1.0f;
    map.matrix.at(1, 1) = 1.0f;
    map.offset.assign(2, 0.0f);
    save_retargeted_csv(tmp_path("retarget.csv"), retarget(track, map));
    std::ifstream f(tmp_path("retarget.csv"));
    std::string line;
    std::getline(f, line);
    CHECK(line == "frame,p01,p02");
    std::getline(f, line);
    CHECK(line == "0,0.0000,0.0000");
    std::getline(f, line);
    CHECK(line == "1,50.0000,50.0000");
}

TEST_CASE("bench produces one measurement pair per window") {
    const Checkpoint ckpt = random_checkpoint(8, 13);
    const LatencyReport report = bench(ckpt, 25, 99);
    CHECK(report.windows() == 25);
    CHECK(report.feat_ms.size() == report.forward_ms.size());
    for (double v : report.feat_ms) CHECK(v >= 0.0);

    write_latency_csv(tmp_path("latency.csv"), report);
    std::ifstream f(tmp_path("latency.csv"));
    std::string line;
    std::getline(f, line);
    CHECK(line == "window,feat_ms,forward_ms");
    size_t rows = 0;
    while (std::getline(f, line)) ++rows;
    CHECK(rows == 25);

    const std::string table = format_latency_table(report);
    CHECK(table.find("lookahead") != std::string::npos);
    CHECK(table.find("1.0667") != std::string::npos);
}
