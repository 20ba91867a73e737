// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "a2f/audio.hpp"
#include "a2f/fft.hpp"
#include "a2f/tensor.hpp"

namespace a2f {

enum class FeatureKind : uint8_t { kMfcc = 0, kLpc = 1 };

constexpr size_t kWindowFrames = 64;       // audio frames per window
constexpr size_t kFeatureDim = 39;         // coefficients per audio frame
constexpr size_t kFrameLenSamples = 2940;  // 66.67 ms
constexpr size_t kHopSamples = 1470;       // 33.33 ms (2x overlap)
// Context on each side of a video frame's own samples; the raw window is
// 2*47040 + 1470 = 95550 samples (~2.167 s).
constexpr size_t kContextSamples = 47040;
constexpr size_t kRawWindowLen = 2 * kContextSamples + kSamplesPerVideoFrame;

struct FeatureConfig {
    FeatureKind feature_kind = FeatureKind::kMfcc;
    size_t n_coeffs = kFeatureDim;
    size_t frame_len_samples = kFrameLenSamples;
    size_t hop_samples = kHopSamples;
    size_t fft_size = 4096;
    size_t n_mel_filters = 40;
    double preemphasis = 0.97;
    size_t lpc_order = kFeatureDim;

    void validate() const;  // throws on violated invariants
};

// One 64x39 acoustic window feeding one animation frame. Row order is
// oldest -> newest audio frame.
struct FeatureWindow {
    nn::TensorT<double> coeffs;  // [64 x n_coeffs]
    size_t frame_index = 0;
};

// Number of whole video frames the clip covers (floor).
size_t video_frame_count(const AudioClip& clip);

// The 95550 raw samples centered on a video frame, zero-padded at the clip
// boundaries.
std::vector<double> extract_raw_window(const AudioClip& clip,
                                       size_t frame_index);

// Single-frame coefficient vectors. Input must be exactly
// cfg.frame_len_samples long.
std::vector<double> mfcc_frame(const std::vector<double>& samples,
                               const FeatureConfig& cfg);
std::vector<double> lpc_frame(const std::vector<double>& samples,
                              const FeatureConfig& cfg);

FeatureWindow feature_window(const AudioClip& clip, size_t frame_index,
                             const FeatureConfig& cfg);

// Per-coefficient z-score statistics, persisted with checkpoints. Stats are
// stored in float so training and a reloaded checkpoint normalize
// identically.
struct Normalizer {
    std::vector<float> mean;  // per coefficient
    std::vector<float> std;   // per coefficient, floored at 1e-8 on apply

    static Normalizer identity(size_t dim);
};

Normalizer fit_normalizer(const std::vector<FeatureWindow>& windows);
FeatureWindow apply_normalizer(const FeatureWindow& window,
                               const Normalizer& norm);

// Reusable extraction engine: owns the FFT plan, analysis window, mel bank
// and DCT table, so per-frame cost stays low. All outputs are bit-identical
// to the free functions above.
class FeatureExtractor {
 public:
    explicit FeatureExtractor(const FeatureConfig& cfg);
    ~FeatureExtractor();
    FeatureExtractor(FeatureExtractor&&) noexcept;
    FeatureExtractor& operator=(FeatureExtractor&&) noexcept;

    const FeatureConfig& config() const;

    // Coefficients of one analysis frame (frame_len_samples samples).
    void frame_coeffs(const double* samples, double* out) const;

    // Coefficients of the analysis frame starting at sample
    // grid_index * hop_samples, zero-padded outside the clip. Windows for
    // consecutive video frames share 63 of their 64 grid frames, which is
    // what makes caching by grid index worthwhile.
    void grid_frame(const AudioClip& clip, int64_t grid_index,
                    double* out) const;
    void grid_frame(const float* samples, size_t n_samples, int64_t grid_index,
                    double* out) const;

    FeatureWindow window(const AudioClip& clip, size_t frame_index) const;

 private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// All analysis-frame coefficients a clip needs, one row per grid index
// [-32, n_frames+31). Row j of window i is grid index i + j - 32.
struct ClipFeatureGrid {
    size_t n_frames = 0;
    nn::TensorT<double> rows;  // [(n_frames + 63) x n_coeffs]

    const double* grid_row(int64_t grid_index) const {
        return rows.row(static_cast<size_t>(grid_index + 32));
    }
};

ClipFeatureGrid build_feature_grid(const AudioClip& clip,
                                   const FeatureConfig& cfg);

// Exact equivalent of fit_normalizer over every window of every clip,
// computed from the grids: each grid row is weighted by the number of
// windows that contain it.
Normalizer fit_normalizer_grids(const std::vector<const ClipFeatureGrid*>& grids);

// Gathers window `frame_index` from a grid, normalizes, and writes 64 rows
// of `dim` floats at out[(row_stride * r)], r = 0..63.
void materialize_window(const ClipFeatureGrid& grid, size_t frame_index,
                        const Normalizer& norm, float* out, size_t row_stride);

// Binary feature dump: magic "A2FF", u32 version, u32 n_windows, u32 rows,
// u32 cols, then row-major f32 little-endian per window.
void write_feature_dump(const std::string& path,
                        const std::vector<FeatureWindow>& windows);
std::vector<FeatureWindow> read_feature_dump(const std::string& path);

}  // namespace a2f
