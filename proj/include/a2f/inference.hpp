// SPDX-License-Identifier: Apache-2.0
//
// Sliding-window inference over audio. A frame needs 47040 samples of future
// context, so streaming has a fixed lookahead of ~1.067 s; frames emit at the
// earliest sample-complete moment.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "a2f/dataset.hpp"
#include "a2f/trainer.hpp"

namespace a2f {

struct LatencyReport {
    std::vector<double> feat_ms;     // per emitted window
    std::vector<double> forward_ms;  // per emitted window
    double lookahead_s =
        static_cast<double>(kContextSamples) / kSampleRate;  // 47040/44100

    size_t windows() const { return feat_ms.size(); }
    double mean_feat_ms() const;
    double mean_forward_ms() const;
    double mean_total_ms() const;
    double p95_total_ms() const;
    double max_total_ms() const;
};

// Human-readable summary, including the 33.33 ms real-time budget verdict.
std::string format_latency_table(const LatencyReport& report);

// CSV: window,feat_ms,forward_ms
void write_latency_csv(const std::string& path, const LatencyReport& report);

// Incremental engine shared by the offline and streaming paths. Per-frame
// analysis coefficients are cached by grid index, so consecutive windows
// recompute only the one frame they don't share.
class StreamInferencer {
 public:
    explicit StreamInferencer(const Checkpoint& ckpt);

    void push(const float* samples, size_t n);
    void push(const std::vector<float>& samples);
    // Marks end of input; trailing frames complete against zero padding.
    void finish();

    // Next frame in order, if its window is sample-complete. Output frames
    // depend only on the samples pushed so far, never on chunk boundaries.
    bool pop(BlendshapeFrame* out);

    size_t frames_emitted() const { return emit_next_; }
    const LatencyReport& report() const { return report_; }

 private:
    bool frame_ready() const;
    const double* grid_row(int64_t j);

    ModelParams params_;
    Normalizer norm_;
    FeatureExtractor extractor_;
    std::vector<float> samples_;
    std::vector<std::vector<double>> grid_;  // index j+32
    bool finished_ = false;
    size_t emit_next_ = 0;
    LatencyReport report_;
};

// Offline inference: one BlendshapeFrame per video frame.
AnimTrack infer_track(const AudioClip& clip, const Checkpoint& ckpt,
                      LatencyReport* report = nullptr);

// Pull-based streaming: `source` fills a buffer and returns the sample count
// (0 = end of stream); `sink` receives frames in order as they complete.
using AudioSource = std::function<size_t(float* buf, size_t max)>;
using FrameSink = std::function<void(size_t frame_index,
                                     const BlendshapeFrame& frame)>;

LatencyReport stream_infer(const AudioSource& source, const Checkpoint& ckpt,
                           const FrameSink& sink);

// ---------------------------------------------------------------------------
// Blink injection

struct BlinkConfig {
    std::vector<size_t> blink_indices = {1, 2};  // 1-based parameter indices
    double period_s = 4.0;
    size_t duration_frames = 6;
    float amplitude = 1.0f;      // normalized scale
    double period_jitter = 0.1;  // +-fraction of the period, seeded
};

// Overlays a triangular close-open pulse on the blink parameters every
// period; everything else is untouched.
AnimTrack blink_inject(const AnimTrack& track, const BlinkConfig& cfg,
                       uint64_t seed);

// ---------------------------------------------------------------------------
// Retargeting

struct RigMap {
    size_t target_dim = 0;
    nn::Tensor matrix;          // [target_dim x 51]
    std::vector<float> offset;  // [target_dim]
};

// CSV: first line the target dimension, then target_dim rows of 52 values
// (51 coefficients + offset).
RigMap load_rigmap(const std::string& path);
void save_rigmap(const std::string& path, const RigMap& map);

// Frames on the target rig, native [0,100] scale.
struct RetargetedTrack {
    size_t dim = 0;
    std::vector<std::vector<float>> frames;
};

// out = clamp(matrix * params_native + offset, 0, 100), per frame.
RetargetedTrack retarget(const AnimTrack& track, const RigMap& map);

// Same CSV layout as blendshape tracks, with target_dim value columns.
void save_retargeted_csv(const std::string& path, const RetargetedTrack& track);

// ---------------------------------------------------------------------------
// Benchmark

// Times the production path (cached features + forward) over seeded
// synthetic audio; one measurement pair per window.
LatencyReport bench(const Checkpoint& ckpt, size_t n_windows, uint64_t seed);

}  // namespace a2f
