// SPDX-License-Identifier: Apache-2.0
#include "a2f/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "a2f/fft.hpp"
#include "a2f/rng.hpp"

namespace a2f {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

[[noreturn]] void row_error(const std::string& path, size_t line_no,
                            const std::string& what) {
    throw std::runtime_error("load_track: " + path + " line " +
                             std::to_string(line_no) + ": " + what);
}

}  // namespace

AnimTrack load_track(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_track: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) {
        throw std::runtime_error("load_track: empty file " + path);
    }
    AnimTrack track;
    size_t line_no = 1;
    int64_t expected_frame = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != kBlendshapeDim + 1) {
            row_error(path, line_no, "expected " +
                      std::to_string(kBlendshapeDim + 1) + " columns, got " +
                      std::to_string(fields.size()));
        }
        int64_t frame = 0;
        try {
            frame = std::stoll(fields[0]);
        } catch (const std::exception&) {
            row_error(path, line_no, "bad frame index '" + fields[0] + "'");
        }
        if (frame != expected_frame) {
            row_error(path, line_no, "frame index " + std::to_string(frame) +
                      " not strictly increasing from 0");
        }
        ++expected_frame;
        BlendshapeFrame bf;
        for (size_t j = 0; j < kBlendshapeDim; ++j) {
            double v = 0.0;
            try {
                v = std::stod(fields[j + 1]);
            } catch (const std::exception&) {
                row_error(path, line_no, "bad value '" + fields[j + 1] + "'");
            }
            if (!(v >= 0.0 && v <= 100.0)) {
                row_error(path, line_no, "value " + fields[j + 1] +
                          " outside [0,100] in column p" + std::to_string(j + 1));
            }
            bf.params[j] = static_cast<float>(v / 100.0);
        }
        track.frames.push_back(bf);
    }
    return track;
}

void save_track(const std::string& path, const AnimTrack& track) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_track: cannot open " + path);
    f << "frame";
    for (size_t j = 1; j <= kBlendshapeDim; ++j) {
        char name[8];
        std::snprintf(name, sizeof(name), ",p%02zu", j);
        f << name;
    }
    f << "\n";
    char buf[16];
    for (size_t i = 0; i < track.frames.size(); ++i) {
        f << i;
        for (size_t j = 0; j < kBlendshapeDim; ++j) {
            const double v = static_cast<double>(track.frames[i].params[j]) * 100.0;
            std::snprintf(buf, sizeof(buf), ",%.4f", v);
            f << buf;
        }
        f << "\n";
    }
    if (!f) throw std::runtime_error("save_track: write failed for " + path);
}

std::vector<Sample> build_samples(const AudioClip& clip, const AnimTrack& track,
                                  const FeatureConfig& cfg, uint32_t clip_id) {
    const size_t frames = video_frame_count(clip);
    if (track.size() > frames) {
        throw std::runtime_error("build_samples: track has " +
                                 std::to_string(track.size()) +
                                 " frames but audio covers only " +
                                 std::to_string(frames));
    }
    FeatureExtractor ex(cfg);
    std::vector<Sample> samples;
    samples.reserve(track.size());
    for (size_t i = 0; i < track.size(); ++i) {
        Sample s;
        s.features = ex.window(clip, i);
        s.target = track.frames[i];
        s.clip_id = clip_id;
        s.frame_index = i;
        samples.push_back(std::move(s));
    }
    return samples;
}

// ---------------------------------------------------------------------------
// Synthetic data

std::array<double, kOracleBands> band_features(const float* samples,
                                               size_t count) {
    static const RealFft fft(2048);
    std::vector<double> buf(count);
    for (size_t i = 0; i < count; ++i) buf[i] = static_cast<double>(samples[i]);
    std::vector<double> power(fft.size() / 2 + 1);
    fft.power_spectrum(buf.data(), buf.size(), power.data());

    // Log-spaced edges, 80 Hz .. 8 kHz.
    std::array<double, kOracleBands> feats{};
    const double bin_hz = static_cast<double>(kSampleRate) /
                          static_cast<double>(fft.size());
    for (size_t b = 0; b < kOracleBands; ++b) {
        const double lo = 80.0 * std::pow(100.0, static_cast<double>(b) /
                                                     kOracleBands);
        const double hi = 80.0 * std::pow(100.0, static_cast<double>(b + 1) /
                                                     kOracleBands);
        double e = 0.0;
        for (size_t k = 0; k < power.size(); ++k) {
            const double f = bin_hz * static_cast<double>(k);
            if (f >= lo && f < hi) e += power[k];
        }
        feats[b] = (std::log(std::max(e, 1e-8)) + 10.0) / 8.0;
    }
    return feats;
}

BlendshapeFrame oracle_frame(const SynthOracle& oracle, const float* samples,
                             size_t count) {
    const auto feats = band_features(samples, count);
    BlendshapeFrame frame;
    for (size_t j = 0; j < kBlendshapeDim; ++j) {
        double z = oracle.coeffs[j][kOracleBands];
        for (size_t b = 0; b < kOracleBands; ++b) {
            z += oracle.coeffs[j][b] * feats[b];
        }
        frame.params[j] = static_cast<float>(1.0 / (1.0 + std::exp(-z)));
    }
    return frame;
}

namespace {

// Slowly varying value in (0,1): a fixed bank of seeded sinusoids squashed
// through a logistic.
struct SmoothNoise {
    std::array<double, 4> amp, freq, phase;

    SmoothNoise(Rng& rng, const std::array<double, 4>& freqs) : freq(freqs) {
        for (size_t k = 0; k < 4; ++k) {
            amp[k] = rng.uniform(0.4, 1.1);
            phase[k] = rng.uniform(0.0, kTwoPi);
        }
    }

    double operator()(double t) const {
        double z = 0.0;
        for (size_t k = 0; k < 4; ++k) {
            z += amp[k] * std::sin(kTwoPi * freq[k] * t + phase[k]);
        }
        return 1.0 / (1.0 + std::exp(-z));
    }
};

}  // namespace

SynthOracle make_synth_oracle(uint64_t seed) {
    Rng rng(seed);
    Rng oracle_rng = rng.fork(5);
    SynthOracle oracle;
    oracle.coeffs.resize(kBlendshapeDim);
    for (auto& row : oracle.coeffs) {
        for (size_t b = 0; b < kOracleBands; ++b) {
            row[b] = oracle_rng.normal() * 0.35;
        }
        row[kOracleBands] = oracle_rng.normal() * 0.6;
    }
    return oracle;
}

SynthResult synth_generate(uint64_t seed, double duration_s) {
    return synth_generate(seed, duration_s, make_synth_oracle(seed));
}

SynthResult synth_generate(uint64_t seed, double duration_s,
                           const SynthOracle& oracle) {
    if (duration_s <= 0.0) {
        throw std::runtime_error("synth_generate: duration must be positive");
    }
    if (oracle.coeffs.size() != kBlendshapeDim) {
        throw std::runtime_error("synth_generate: malformed oracle");
    }
    Rng rng(seed);
    Rng pitch_rng = rng.fork(1);
    Rng env_rng = rng.fork(2);
    Rng gap_rng = rng.fork(3);
    Rng noise_rng = rng.fork(4);
    rng.fork(5);  // keep the stream layout of the oracle-drawing variant

    const size_t n = static_cast<size_t>(std::llround(duration_s * kSampleRate));
    const SmoothNoise pitch_noise(pitch_rng, {0.11, 0.27, 0.53, 0.97});
    const SmoothNoise env_noise(env_rng, {0.17, 0.41, 0.79, 1.37});

    // Voiced/silent phrase pattern. Gap samples are exactly zero; fades sit
    // inside the voiced stretches.
    std::vector<std::pair<double, double>> gaps;
    double t = gap_rng.uniform(0.9, 2.0);
    while (t < duration_s) {
        const double gap_len = gap_rng.uniform(0.25, 0.7);
        gaps.emplace_back(t, t + gap_len);
        t += gap_len + gap_rng.uniform(0.8, 2.5);
    }

    // Gaps are ordered and non-overlapping; samples arrive in time order, so
    // one advancing index suffices.
    size_t gap_idx = 0;
    auto gate = [&gaps, &gap_idx](double tt) {
        constexpr double kFade = 0.03;
        constexpr double kPi = kTwoPi / 2.0;
        while (gap_idx < gaps.size() && tt >= gaps[gap_idx].second + kFade) {
            ++gap_idx;
        }
        if (gap_idx >= gaps.size()) return 1.0;
        const auto& [gs, ge] = gaps[gap_idx];
        if (tt >= gs && tt < ge) return 0.0;
        if (tt >= gs - kFade && tt < gs) {
            return 0.5 + 0.5 * std::cos(kPi * (tt - gs + kFade) / kFade);
        }
        if (tt >= ge && tt < ge + kFade) {
            return 0.5 - 0.5 * std::cos(kPi * (tt - ge) / kFade);
        }
        return 1.0;
    };

    // Pitch and envelope contours sampled at 10 ms and lerped.
    const size_t grid_step = 441;
    const size_t grid_n = n / grid_step + 2;
    std::vector<double> pitch_grid(grid_n), env_grid(grid_n);
    for (size_t i = 0; i < grid_n; ++i) {
        const double tt = static_cast<double>(i * grid_step) / kSampleRate;
        pitch_grid[i] = 80.0 + 220.0 * pitch_noise(tt);
        env_grid[i] = 0.3 + 0.7 * env_noise(tt);
    }
    auto lerp_grid = [&](const std::vector<double>& grid_vals, size_t s) {
        const size_t i = s / grid_step;
        const double frac = static_cast<double>(s % grid_step) / grid_step;
        return grid_vals[i] + (grid_vals[i + 1] - grid_vals[i]) * frac;
    };

    std::vector<float> raw(n);
    double phase = 0.0;
    for (size_t s = 0; s < n; ++s) {
        const double tt = static_cast<double>(s) / kSampleRate;
        const double f0 = lerp_grid(pitch_grid, s);
        phase += kTwoPi * f0 / kSampleRate;
        if (phase > kTwoPi) phase -= kTwoPi;
        const double g = gate(tt);
        double v = 0.0;
        if (g > 0.0) {
            const double env = lerp_grid(env_grid, s);
            v = 0.6 * std::sin(phase) + 0.3 * std::sin(2.0 * phase + 0.7) +
                0.15 * std::sin(3.0 * phase + 1.9);
            v = g * env * (0.72 * v + 0.015 * (noise_rng.uniform() - 0.5) * 2.0);
        } else {
            noise_rng.uniform();  // keep the stream position frame-independent
        }
        raw[s] = static_cast<float>(v);
    }

    SynthResult out;
    // Quantize through PCM16 (same rule as save_wav) so the stored oracle
    // track matches what a consumer recomputes from the WAV on disk.
    out.clip.samples.resize(n);
    for (size_t s = 0; s < n; ++s) {
        const int32_t q = static_cast<int32_t>(
            std::lround(std::clamp(raw[s], -1.0f, 1.0f) * 32768.0f));
        out.clip.samples[s] =
            static_cast<float>(std::clamp(q, -32768, 32767)) / 32768.0f;
    }

    out.oracle = oracle;

    const size_t frames = out.clip.n_samples() / kSamplesPerVideoFrame;
    out.track.frames.resize(frames);
    for (size_t i = 0; i < frames; ++i) {
        out.track.frames[i] = oracle_frame(
            out.oracle, out.clip.samples.data() + i * kSamplesPerVideoFrame,
            kSamplesPerVideoFrame);
    }
    return out;
}

void save_oracle(const std::string& path, const SynthOracle& oracle) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_oracle: cannot open " + path);
    char buf[32];
    for (const auto& row : oracle.coeffs) {
        for (size_t k = 0; k < row.size(); ++k) {
            std::snprintf(buf, sizeof(buf), "%.17g", row[k]);
            f << (k ? "," : "") << buf;
        }
        f << "\n";
    }
    if (!f) throw std::runtime_error("save_oracle: write failed for " + path);
}

SynthOracle load_oracle(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_oracle: cannot open " + path);
    SynthOracle oracle;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != kOracleBands + 1) {
            throw std::runtime_error("load_oracle: expected " +
                                     std::to_string(kOracleBands + 1) +
                                     " columns in " + path);
        }
        std::array<double, kOracleBands + 1> row{};
        for (size_t k = 0; k < row.size(); ++k) row[k] = std::stod(fields[k]);
        oracle.coeffs.push_back(row);
    }
    if (oracle.coeffs.size() != kBlendshapeDim) {
        throw std::runtime_error("load_oracle: expected " +
                                 std::to_string(kBlendshapeDim) + " rows in " +
                                 path);
    }
    return oracle;
}

// ---------------------------------------------------------------------------
// Manifests

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 3 || (fields[2] != "train" && fields[2] != "val")) {
            throw std::runtime_error(
                "load_manifest: " + path + " line " + std::to_string(line_no) +
                ": expected <wav>,<csv>,<train|val>");
        }
        entries.push_back({fields[0], fields[1], fields[2]});
    }
    return entries;
}

void save_manifest(const std::string& path,
                   const std::vector<ManifestEntry>& entries) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
    for (const auto& e : entries) {
        f << e.wav_path << "," << e.track_path << "," << e.split << "\n";
    }
}

void split_entries(std::vector<ManifestEntry>& entries, double ratio,
                   uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw std::runtime_error("split: ratio must be in (0,1), got " +
                                 std::to_string(ratio));
    }
    const size_t n = entries.size();
    if (n < 2) {
        throw std::runtime_error("split: need at least 2 clips, got " +
                                 std::to_string(n));
    }
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (size_t i = n - 1; i > 0; --i) {
        const size_t j = rng.uniform_index(i + 1);
        std::swap(order[i], order[j]);
    }
    size_t n_train = static_cast<size_t>(
        std::llround(ratio * static_cast<double>(n)));
    n_train = std::clamp<size_t>(n_train, 1, n - 1);
    for (size_t i = 0; i < n; ++i) {
        entries[order[i]].split = i < n_train ? "train" : "val";
    }
}

}  // namespace a2f
