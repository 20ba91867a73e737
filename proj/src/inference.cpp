// SPDX-License-Identifier: Apache-2.0
#include "a2f/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "a2f/rng.hpp"

namespace a2f {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

}  // namespace

double LatencyReport::mean_feat_ms() const { return mean_of(feat_ms); }
double LatencyReport::mean_forward_ms() const { return mean_of(forward_ms); }

double LatencyReport::mean_total_ms() const {
    return mean_feat_ms() + mean_forward_ms();
}

double LatencyReport::p95_total_ms() const {
    if (feat_ms.empty()) return 0.0;
    std::vector<double> total(feat_ms.size());
    for (size_t i = 0; i < total.size(); ++i) total[i] = feat_ms[i] + forward_ms[i];
    std::sort(total.begin(), total.end());
    const size_t idx = std::min(total.size() - 1,
                                static_cast<size_t>(0.95 * total.size()));
    return total[idx];
}

double LatencyReport::max_total_ms() const {
    double mx = 0.0;
    for (size_t i = 0; i < feat_ms.size(); ++i) {
        mx = std::max(mx, feat_ms[i] + forward_ms[i]);
    }
    return mx;
}

std::string format_latency_table(const LatencyReport& r) {
    constexpr double kBudgetMs = 1000.0 / kFps;  // 33.33 ms per window
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "windows            %zu\n", r.windows());
    os << line;
    std::snprintf(line, sizeof(line), "feature mean       %8.3f ms\n",
                  r.mean_feat_ms());
    os << line;
    std::snprintf(line, sizeof(line), "forward mean       %8.3f ms\n",
                  r.mean_forward_ms());
    os << line;
    std::snprintf(line, sizeof(line),
                  "total mean/p95/max %8.3f / %.3f / %.3f ms\n",
                  r.mean_total_ms(), r.p95_total_ms(), r.max_total_ms());
    os << line;
    std::snprintf(line, sizeof(line), "lookahead          %8.4f s\n",
                  r.lookahead_s);
    os << line;
    std::snprintf(line, sizeof(line), "budget %.2f ms     %s\n", kBudgetMs,
                  r.mean_total_ms() < kBudgetMs ? "PASS" : "FAIL");
    os << line;
    return os.str();
}

void write_latency_csv(const std::string& path, const LatencyReport& report) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("latency csv: cannot open " + path);
    f << "window,feat_ms,forward_ms\n";
    for (size_t i = 0; i < report.windows(); ++i) {
        f << i << "," << report.feat_ms[i] << "," << report.forward_ms[i] << "\n";
    }
}

// ---------------------------------------------------------------------------
// StreamInferencer

StreamInferencer::StreamInferencer(const Checkpoint& ckpt)
    : params_(ckpt.params),
      norm_(ckpt.normalizer),
      extractor_(ckpt.feature_cfg) {
    if (norm_.mean.size() != ckpt.feature_cfg.n_coeffs) {
        throw std::runtime_error("StreamInferencer: normalizer dimension " +
                                 std::to_string(norm_.mean.size()) +
                                 " does not match feature config");
    }
}

void StreamInferencer::push(const float* samples, size_t n) {
    if (finished_) {
        throw std::runtime_error("StreamInferencer: push after finish");
    }
    samples_.insert(samples_.end(), samples, samples + n);
}

void StreamInferencer::push(const std::vector<float>& samples) {
    push(samples.data(), samples.size());
}

void StreamInferencer::finish() { finished_ = true; }

bool StreamInferencer::frame_ready() const {
    const size_t t = emit_next_;
    if (finished_) {
        return t < samples_.size() / kSamplesPerVideoFrame;
    }
    // Frame t's last grid row covers samples up to (t+1)*1470 + 47040.
    return samples_.size() >=
           (t + 1) * kSamplesPerVideoFrame + kContextSamples;
}

const double* StreamInferencer::grid_row(int64_t j) {
    const size_t slot = static_cast<size_t>(j + 32);
    if (slot >= grid_.size()) grid_.resize(slot + 1);
    if (grid_[slot].empty()) {
        grid_[slot].resize(extractor_.config().n_coeffs);
        extractor_.grid_frame(samples_.data(), samples_.size(), j,
                              grid_[slot].data());
    }
    return grid_[slot].data();
}

bool StreamInferencer::pop(BlendshapeFrame* out) {
    if (!frame_ready()) return false;
    const size_t t = emit_next_;

    const auto t0 = Clock::now();
    FeatureWindow window;
    window.frame_index = t;
    const size_t dim = extractor_.config().n_coeffs;
    window.coeffs = nn::TensorT<double>::zeros(kWindowFrames, dim);
    for (size_t r = 0; r < kWindowFrames; ++r) {
        const double* src = grid_row(static_cast<int64_t>(t + r) - 32);
        double* dst = window.coeffs.row(r);
        for (size_t c = 0; c < dim; ++c) {
            const double s = std::max(static_cast<double>(norm_.std[c]), 1e-8);
            dst[c] = (src[c] - static_cast<double>(norm_.mean[c])) / s;
        }
    }
    const double feat_ms = ms_since(t0);

    const auto t1 = Clock::now();
    *out = model_forward(window, params_);
    const double forward_ms = ms_since(t1);

    report_.feat_ms.push_back(feat_ms);
    report_.forward_ms.push_back(forward_ms);
    ++emit_next_;
    return true;
}

// ---------------------------------------------------------------------------

AnimTrack infer_track(const AudioClip& clip, const Checkpoint& ckpt,
                      LatencyReport* report) {
    StreamInferencer engine(ckpt);
    engine.push(clip.samples);
    engine.finish();
    AnimTrack track;
    track.frames.reserve(video_frame_count(clip));
    BlendshapeFrame frame;
    while (engine.pop(&frame)) track.frames.push_back(frame);
    if (report != nullptr) *report = engine.report();
    return track;
}

LatencyReport stream_infer(const AudioSource& source, const Checkpoint& ckpt,
                           const FrameSink& sink) {
    StreamInferencer engine(ckpt);
    std::vector<float> buf(4096);
    BlendshapeFrame frame;
    bool eof = false;
    while (!eof) {
        const size_t n = source(buf.data(), buf.size());
        if (n == 0) {
            engine.finish();
            eof = true;
        } else {
            engine.push(buf.data(), n);
        }
        while (engine.pop(&frame)) {
            sink(engine.frames_emitted() - 1, frame);
        }
    }
    return engine.report();
}

// ---------------------------------------------------------------------------
// Blink injection

AnimTrack blink_inject(const AnimTrack& track, const BlinkConfig& cfg,
                       uint64_t seed) {
    for (size_t idx : cfg.blink_indices) {
        if (idx < 1 || idx > kBlendshapeDim) {
            throw std::runtime_error("blink_inject: parameter index " +
                                     std::to_string(idx) + " outside 1..51");
        }
    }
    if (cfg.duration_frames < 1) {
        throw std::runtime_error("blink_inject: duration must be >= 1 frame");
    }
    AnimTrack out = track;
    Rng rng(seed);
    const double peak = std::ceil(static_cast<double>(cfg.duration_frames) / 2.0);
    double t = 0.0;
    for (;;) {
        const double u = rng.uniform(-1.0, 1.0);
        t += cfg.period_s * (1.0 + cfg.period_jitter * u);
        const size_t start = static_cast<size_t>(std::llround(t * kFps));
        if (start >= out.size()) break;
        for (size_t d = 0; d < cfg.duration_frames; ++d) {
            const size_t f = start + d;
            if (f >= out.size()) break;
            const float w = static_cast<float>(
                std::min(d + 1, cfg.duration_frames - d) / peak);
            for (size_t idx : cfg.blink_indices) {
                float& p = out.frames[f].params[idx - 1];
                p = std::max(p, cfg.amplitude * w);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Retargeting

RigMap load_rigmap(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_rigmap: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) {
        throw std::runtime_error("load_rigmap: empty file " + path);
    }
    RigMap map;
    map.target_dim = static_cast<size_t>(std::stoul(line));
    if (map.target_dim < 1) {
        throw std::runtime_error("load_rigmap: target_dim must be >= 1");
    }
    map.matrix = nn::Tensor::zeros(map.target_dim, kBlendshapeDim);
    map.offset.resize(map.target_dim);
    for (size_t r = 0; r < map.target_dim; ++r) {
        if (!std::getline(f, line)) {
            throw std::runtime_error("load_rigmap: missing row " +
                                     std::to_string(r) + " in " + path);
        }
        std::istringstream ss(line);
        std::string field;
        size_t c = 0;
        while (std::getline(ss, field, ',')) {
            const float v = std::stof(field);
            if (c < kBlendshapeDim) {
                map.matrix.at(r, c) = v;
            } else if (c == kBlendshapeDim) {
                map.offset[r] = v;
            } else {
                throw std::runtime_error("load_rigmap: too many columns in row " +
                                         std::to_string(r));
            }
            ++c;
        }
        if (c != kBlendshapeDim + 1) {
            throw std::runtime_error("load_rigmap: expected 52 values in row " +
                                     std::to_string(r) + ", got " +
                                     std::to_string(c));
        }
    }
    return map;
}

void save_rigmap(const std::string& path, const RigMap& map) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_rigmap: cannot open " + path);
    f << map.target_dim << "\n";
    for (size_t r = 0; r < map.target_dim; ++r) {
        for (size_t c = 0; c < kBlendshapeDim; ++c) {
            f << map.matrix.at(r, c) << ",";
        }
        f << map.offset[r] << "\n";
    }
}

RetargetedTrack retarget(const AnimTrack& track, const RigMap& map) {
    if (map.target_dim == 0 || map.matrix.rows() != map.target_dim ||
        map.matrix.cols() != kBlendshapeDim ||
        map.offset.size() != map.target_dim) {
        throw std::runtime_error("retarget: malformed rig map");
    }
    RetargetedTrack out;
    out.dim = map.target_dim;
    out.frames.resize(track.size());
    for (size_t i = 0; i < track.size(); ++i) {
        auto& dst = out.frames[i];
        dst.resize(map.target_dim);
        for (size_t r = 0; r < map.target_dim; ++r) {
            double acc = static_cast<double>(map.offset[r]);
            for (size_t c = 0; c < kBlendshapeDim; ++c) {
                acc += static_cast<double>(map.matrix.at(r, c)) *
                       (static_cast<double>(track.frames[i].params[c]) * 100.0);
            }
            dst[r] = static_cast<float>(std::clamp(acc, 0.0, 100.0));
        }
    }
    return out;
}

void save_retargeted_csv(const std::string& path, const RetargetedTrack& track) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_retargeted_csv: cannot open " + path);
    f << "frame";
    char name[8];
    for (size_t j = 1; j <= track.dim; ++j) {
        std::snprintf(name, sizeof(name), ",p%02zu", j);
        f << name;
    }
    f << "\n";
    char buf[16];
    for (size_t i = 0; i < track.frames.size(); ++i) {
        f << i;
        for (float v : track.frames[i]) {
            std::snprintf(buf, sizeof(buf), ",%.4f", static_cast<double>(v));
            f << buf;
        }
        f << "\n";
    }
}

// ---------------------------------------------------------------------------
// Benchmark

LatencyReport bench(const Checkpoint& ckpt, size_t n_windows, uint64_t seed) {
    if (n_windows < 1) {
        throw std::runtime_error("bench: need at least one window");
    }
    const double duration_s =
        static_cast<double>(n_windows) / static_cast<double>(kFps);
    const SynthResult synth = synth_generate(seed, duration_s);
    StreamInferencer engine(ckpt);
    engine.push(synth.clip.samples);
    engine.finish();
    BlendshapeFrame frame;
    while (engine.frames_emitted() < n_windows && engine.pop(&frame)) {
    }
    return engine.report();
}

}  // namespace a2f
