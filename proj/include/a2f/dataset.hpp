// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "a2f/audio.hpp"
#include "a2f/features.hpp"
#include "a2f/model.hpp"

namespace a2f {

// 30 FPS blendshape track. In memory the parameters are normalized [0,1];
// the CSV format stores [0,100].
struct AnimTrack {
    std::vector<BlendshapeFrame> frames;

    size_t size() const { return frames.size(); }
};

// Track CSV: header "frame,p01,...,p51", one row per frame, frame index
// strictly increasing from 0, values in [0,100] with <= 4 decimals.
AnimTrack load_track(const std::string& path);
void save_track(const std::string& path, const AnimTrack& track);

struct Sample {
    FeatureWindow features;
    BlendshapeFrame target;
    uint32_t clip_id = 0;
    size_t frame_index = 0;
};

// One sample per track frame; features come from feature_window at the same
// index. The track may be shorter than the audio, never longer.
std::vector<Sample> build_samples(const AudioClip& clip, const AnimTrack& track,
                                  const FeatureConfig& cfg, uint32_t clip_id = 0);

// ---------------------------------------------------------------------------
// Synthetic data
//
// Deterministic pseudo-speech plus a published ground-truth mapping: each
// frame's parameters are sigmoid(a . f + c) where f holds the frame's 8
// normalized log band energies (see band_features). The (a, c) rows are
// emitted as a CSV sidecar so the track can be re-derived from the audio
// alone.

constexpr size_t kOracleBands = 8;

struct SynthOracle {
    // 51 rows; each row: 8 band weights then the offset.
    std::vector<std::array<double, kOracleBands + 1>> coeffs;
};

struct SynthResult {
    AudioClip clip;
    AnimTrack track;
    SynthOracle oracle;
};

// Normalized log band energies of one video frame (1470 samples), the fixed
// feature definition the oracle is expressed in.
std::array<double, kOracleBands> band_features(const float* samples,
                                               size_t count);

// Evaluates the oracle on one frame of audio.
BlendshapeFrame oracle_frame(const SynthOracle& oracle, const float* samples,
                             size_t count);

// The oracle synth_generate(seed, ...) would draw for itself.
SynthOracle make_synth_oracle(uint64_t seed);

// One clip with its own oracle drawn from the seed.
SynthResult synth_generate(uint64_t seed, double duration_s);

// One clip scored against a caller-supplied oracle. Multi-clip datasets
// share one oracle (one face mapping, many takes); only the audio varies
// with the seed.
SynthResult synth_generate(uint64_t seed, double duration_s,
                           const SynthOracle& oracle);

void save_oracle(const std::string& path, const SynthOracle& oracle);
SynthOracle load_oracle(const std::string& path);

// ---------------------------------------------------------------------------
// Manifests and splits

struct ManifestEntry {
    std::string wav_path;
    std::string track_path;
    std::string split;  // "train" or "val"
};

// Line format: <wav-path>,<csv-path>,<train|val>
std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::string& path,
                   const std::vector<ManifestEntry>& entries);

// Clip-level split: shuffles indices with the seed and assigns the first
// round(n*ratio) clips (clamped to leave both sides nonempty) to train.
void split_entries(std::vector<ManifestEntry>& entries, double ratio,
                   uint64_t seed);

}  // namespace a2f
