// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "a2f/dataset.hpp"
#include "a2f/features.hpp"
#include "a2f/model.hpp"
#include "a2f/objectives.hpp"

namespace a2f {

struct TrainConfig {
    size_t epochs = 500;
    size_t batch_size = 100;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    uint64_t seed = 1;
    LossConfig loss;
    ModelConfig model;
    // Frames per contiguous run inside shuffled minibatches; the smooth term
    // needs adjacent predictions, so frames travel in chunks.
    size_t sequence_chunk = 8;
    double grad_clip = 5.0;

    void validate() const {
        if (epochs < 1 || batch_size < 1 || sequence_chunk < 2) {
            throw std::runtime_error(
                "TrainConfig: need epochs>=1, batch_size>=1, sequence_chunk>=2");
        }
        loss.validate();
        model.validate();
    }
};

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    std::vector<nn::Tensor> m;
    std::vector<nn::Tensor> v;
    uint64_t step = 0;
};

AdamState make_adam_state(ModelParams& params);

// Standard Adam with bias correction. params/grads/state are parallel
// sequences (visit order).
void adam_step(const std::vector<nn::Tensor*>& params,
               const std::vector<const nn::Tensor*>& grads, AdamState& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999,
               double epsilon = 1e-8);

// ---------------------------------------------------------------------------
// Batch schedule

// A contiguous run of frames from one clip.
struct BatchPiece {
    uint32_t clip = 0;
    uint32_t first = 0;
    uint32_t len = 0;
};
using Batch = std::vector<BatchPiece>;

// Groups each clip's frames into contiguous chunks of sequence_chunk frames,
// shuffles the chunks, and packs batches of exactly batch_size frames. A
// chunk crossing a batch boundary is cut; the remainder stays contiguous and
// starts the next batch. The final batch may be short.
std::vector<Batch> make_batches(const std::vector<size_t>& clip_frame_counts,
                                size_t batch_size, size_t sequence_chunk,
                                uint64_t seed, bool shuffle = true);

// ---------------------------------------------------------------------------
// Prepared data

// A clip ready for training: cached analysis-frame grid plus targets.
struct TrainClip {
    ClipFeatureGrid grid;
    std::vector<BlendshapeFrame> targets;
    uint32_t clip_id = 0;
};

struct PreparedData {
    std::vector<TrainClip> clips;

    size_t total_frames() const {
        size_t n = 0;
        for (const auto& c : clips) n += c.targets.size();
        return n;
    }
};

TrainClip prepare_clip(const AudioClip& clip, const AnimTrack& track,
                       const FeatureConfig& cfg, uint32_t clip_id);

// Loads every manifest entry with the given split tag ("train"/"val").
PreparedData prepare_split(const std::vector<ManifestEntry>& entries,
                           const std::string& split_tag,
                           const FeatureConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints
//
// File format "A2FM": magic, u32 version=1, u32 tensor count, then per tensor
// u16 name length, name bytes, u8 rank, u32 dims, f32 little-endian data.
// Model weights, feature config, model config, normalizer and training
// metadata all travel as named tensors, so a checkpoint is self-describing.

struct Checkpoint {
    ModelParams params;
    FeatureConfig feature_cfg;
    Normalizer normalizer;
    uint32_t epochs_run = 0;
    uint32_t best_epoch = 0;
    float best_metric = 0.0f;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
    size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_rmse = 0.0;
};

// Runs the full loop. When out_path is nonempty, writes the final checkpoint
// there, the best-validation checkpoint to out_path + ".best", and a CSV log
// (epoch,train_loss,val_loss,val_rmse) to out_path + ".log.csv". With an
// empty validation set the best checkpoint tracks training loss and the val
// columns are NaN. Returns the final checkpoint.
Checkpoint train(const PreparedData& train_set, const PreparedData& val_set,
                 const TrainConfig& cfg, const FeatureConfig& feature_cfg,
                 const std::string& out_path,
                 std::vector<EpochLog>* log_out = nullptr,
                 std::ostream* progress = nullptr);

// Batched forward pass over prepared clips (no gradients); one predicted
// track per clip. Bit-identical to the per-frame inference path.
std::vector<AnimTrack> predict_tracks(const PreparedData& data,
                                      const ModelParams& params,
                                      const Normalizer& norm,
                                      size_t batch_size = 100);

}  // namespace a2f
