// SPDX-License-Identifier: Apache-2.0
#include "a2f/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>

#include "a2f/rng.hpp"

namespace a2f {

// ---------------------------------------------------------------------------
// Adam

AdamState make_adam_state(ModelParams& params) {
    AdamState state;
    params.visit([&](const std::string&, nn::Tensor& t) {
        state.m.push_back(nn::Tensor::zeros_like(t));
        state.v.push_back(nn::Tensor::zeros_like(t));
    });
    return state;
}

void adam_step(const std::vector<nn::Tensor*>& params,
               const std::vector<const nn::Tensor*>& grads, AdamState& state,
               double lr, double beta1, double beta2, double epsilon) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw std::runtime_error("adam_step: parameter/gradient/state count "
                                 "mismatch");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t p = 0; p < params.size(); ++p) {
        nn::Tensor& w = *params[p];
        const nn::Tensor& g = *grads[p];
        if (w.shape != g.shape) {
            throw std::runtime_error("adam_step: shape mismatch " +
                                     w.shape_str() + " vs " + g.shape_str());
        }
        nn::Tensor& m = state.m[p];
        nn::Tensor& v = state.v[p];
        for (size_t i = 0; i < w.numel(); ++i) {
            const double gi = static_cast<double>(g.data[i]);
            const double mi = beta1 * m.data[i] + (1.0 - beta1) * gi;
            const double vi = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
            m.data[i] = static_cast<float>(mi);
            v.data[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            w.data[i] = static_cast<float>(
                w.data[i] - lr * mhat / (std::sqrt(vhat) + epsilon));
        }
    }
}

// ---------------------------------------------------------------------------
// Batch schedule

std::vector<Batch> make_batches(const std::vector<size_t>& clip_frame_counts,
                                size_t batch_size, size_t sequence_chunk,
                                uint64_t seed, bool shuffle) {
    if (batch_size == 0 || sequence_chunk == 0) {
        throw std::runtime_error("make_batches: batch_size and sequence_chunk "
                                 "must be positive");
    }
    std::vector<BatchPiece> chunks;
    for (size_t c = 0; c < clip_frame_counts.size(); ++c) {
        const size_t n = clip_frame_counts[c];
        for (size_t f = 0; f < n; f += sequence_chunk) {
            BatchPiece piece;
            piece.clip = static_cast<uint32_t>(c);
            piece.first = static_cast<uint32_t>(f);
            piece.len = static_cast<uint32_t>(std::min(sequence_chunk, n - f));
            chunks.push_back(piece);
        }
    }
    if (shuffle) {
        Rng rng(seed);
        for (size_t i = chunks.size(); i > 1; --i) {
            const size_t j = rng.uniform_index(i);
            std::swap(chunks[i - 1], chunks[j]);
        }
    }

    std::vector<Batch> batches;
    Batch current;
    size_t room = batch_size;
    for (BatchPiece piece : chunks) {
        while (piece.len > 0) {
            const uint32_t take =
                static_cast<uint32_t>(std::min<size_t>(piece.len, room));
            current.push_back({piece.clip, piece.first, take});
            piece.first += take;
            piece.len -= take;
            room -= take;
            if (room == 0) {
                batches.push_back(std::move(current));
                current.clear();
                room = batch_size;
            }
        }
    }
    if (!current.empty()) batches.push_back(std::move(current));
    return batches;
}

// ---------------------------------------------------------------------------
// Data preparation

TrainClip prepare_clip(const AudioClip& clip, const AnimTrack& track,
                       const FeatureConfig& cfg, uint32_t clip_id) {
    const size_t frames = video_frame_count(clip);
    if (track.size() > frames) {
        throw std::runtime_error("prepare_clip: track longer than audio (" +
                                 std::to_string(track.size()) + " vs " +
                                 std::to_string(frames) + " frames)");
    }
    TrainClip out;
    out.grid = build_feature_grid(clip, cfg);
    out.targets = track.frames;
    out.clip_id = clip_id;
    return out;
}

PreparedData prepare_split(const std::vector<ManifestEntry>& entries,
                           const std::string& split_tag,
                           const FeatureConfig& cfg) {
    PreparedData data;
    uint32_t id = 0;
    for (const auto& e : entries) {
        if (e.split != split_tag) {
            ++id;
            continue;
        }
        const AudioClip clip = load_wav(e.wav_path);
        const AnimTrack track = load_track(e.track_path);
        data.clips.push_back(prepare_clip(clip, track, cfg, id));
        ++id;
    }
    return data;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

void put_u16(std::string& s, uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& s, uint32_t v) {
    put_u16(s, static_cast<uint16_t>(v & 0xffff));
    put_u16(s, static_cast<uint16_t>(v >> 16));
}

void put_f32(std::string& s, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(s, bits);
}

struct Reader {
    const std::string& path;
    std::ifstream f;
    explicit Reader(const std::string& p)
        : path(p), f(p, std::ios::binary) {
        if (!f) throw std::runtime_error("checkpoint: cannot open " + p);
    }
    void bytes(void* dst, size_t n) {
        if (!f.read(static_cast<char*>(dst), static_cast<std::streamsize>(n))) {
            throw std::runtime_error("checkpoint: truncated file " + path);
        }
    }
    uint16_t u16() {
        unsigned char b[2];
        bytes(b, 2);
        return static_cast<uint16_t>(b[0] | (b[1] << 8));
    }
    uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) |
               (static_cast<uint32_t>(b[3]) << 24);
    }
    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

void append_tensor(std::string& out, const std::string& name,
                   const nn::Tensor& t) {
    put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.shape.size()));
    for (size_t d : t.shape) put_u32(out, static_cast<uint32_t>(d));
    for (float v : t.data) put_f32(out, v);
}

nn::Tensor vec_tensor(const std::vector<float>& v) {
    nn::Tensor t;
    t.shape = {1, v.size()};
    t.data = v;
    return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::vector<std::pair<std::string, nn::Tensor>> tensors;
    const ModelConfig& mc = ckpt.params.config;
    tensors.emplace_back(
        "config/model",
        vec_tensor({static_cast<float>(mc.hidden_size),
                    static_cast<float>(mc.basis_size),
                    mc.bidirectional ? 1.0f : 0.0f,
                    mc.use_attention ? 1.0f : 0.0f,
                    static_cast<float>(mc.input_rows),
                    static_cast<float>(mc.input_cols)}));
    const FeatureConfig& fc = ckpt.feature_cfg;
    tensors.emplace_back(
        "config/feature",
        vec_tensor({static_cast<float>(fc.feature_kind == FeatureKind::kLpc),
                    static_cast<float>(fc.n_coeffs),
                    static_cast<float>(fc.frame_len_samples),
                    static_cast<float>(fc.hop_samples),
                    static_cast<float>(fc.fft_size),
                    static_cast<float>(fc.n_mel_filters),
                    static_cast<float>(fc.preemphasis),
                    static_cast<float>(fc.lpc_order)}));
    tensors.emplace_back("normalizer/mean", vec_tensor(ckpt.normalizer.mean));
    tensors.emplace_back("normalizer/std", vec_tensor(ckpt.normalizer.std));
    tensors.emplace_back(
        "meta", vec_tensor({static_cast<float>(ckpt.epochs_run),
                            static_cast<float>(ckpt.best_epoch),
                            ckpt.best_metric}));
    ckpt.params.visit([&](const std::string& name, const nn::Tensor& t) {
        tensors.emplace_back(name, t);
    });

    std::string out;
    out += "A2FM";
    put_u32(out, 1);
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) append_tensor(out, name, t);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "A2FM", 4) != 0) {
        throw std::runtime_error("load_checkpoint: " + path +
                                 " is not a checkpoint (bad magic)");
    }
    const uint32_t version = r.u32();
    if (version != 1) {
        throw std::runtime_error("load_checkpoint: unsupported version " +
                                 std::to_string(version) + " in " + path);
    }
    const uint32_t count = r.u32();
    std::map<std::string, nn::Tensor> table;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16();
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        unsigned char rank;
        r.bytes(&rank, 1);
        nn::Tensor t;
        size_t numel = 1;
        for (unsigned d = 0; d < rank; ++d) {
            const uint32_t dim = r.u32();
            t.shape.push_back(dim);
            numel *= dim;
        }
        t.data.resize(numel);
        for (auto& v : t.data) v = r.f32();
        table.emplace(std::move(name), std::move(t));
    }

    auto need = [&](const std::string& name) -> const nn::Tensor& {
        auto it = table.find(name);
        if (it == table.end()) {
            throw std::runtime_error("load_checkpoint: missing tensor '" + name +
                                     "' in " + path);
        }
        return it->second;
    };

    const nn::Tensor& mc_t = need("config/model");
    if (mc_t.numel() != 6) {
        throw std::runtime_error("load_checkpoint: malformed model config");
    }
    ModelConfig mc;
    mc.hidden_size = static_cast<size_t>(mc_t.data[0]);
    mc.basis_size = static_cast<size_t>(mc_t.data[1]);
    mc.bidirectional = mc_t.data[2] != 0.0f;
    mc.use_attention = mc_t.data[3] != 0.0f;
    mc.input_rows = static_cast<size_t>(mc_t.data[4]);
    mc.input_cols = static_cast<size_t>(mc_t.data[5]);

    const nn::Tensor& fc_t = need("config/feature");
    if (fc_t.numel() != 8) {
        throw std::runtime_error("load_checkpoint: malformed feature config");
    }
    Checkpoint ckpt;
    ckpt.feature_cfg.feature_kind =
        fc_t.data[0] != 0.0f ? FeatureKind::kLpc : FeatureKind::kMfcc;
    ckpt.feature_cfg.n_coeffs = static_cast<size_t>(fc_t.data[1]);
    ckpt.feature_cfg.frame_len_samples = static_cast<size_t>(fc_t.data[2]);
    ckpt.feature_cfg.hop_samples = static_cast<size_t>(fc_t.data[3]);
    ckpt.feature_cfg.fft_size = static_cast<size_t>(fc_t.data[4]);
    ckpt.feature_cfg.n_mel_filters = static_cast<size_t>(fc_t.data[5]);
    ckpt.feature_cfg.preemphasis = static_cast<double>(fc_t.data[6]);
    ckpt.feature_cfg.lpc_order = static_cast<size_t>(fc_t.data[7]);

    ckpt.normalizer.mean = need("normalizer/mean").data;
    ckpt.normalizer.std = need("normalizer/std").data;

    const nn::Tensor& meta = need("meta");
    if (meta.numel() >= 3) {
        ckpt.epochs_run = static_cast<uint32_t>(meta.data[0]);
        ckpt.best_epoch = static_cast<uint32_t>(meta.data[1]);
        ckpt.best_metric = meta.data[2];
    }

    ckpt.params = init_model(mc, 0);
    ckpt.params.visit([&](const std::string& name, nn::Tensor& t) {
        const nn::Tensor& src = need(name);
        if (src.shape != t.shape) {
            throw std::runtime_error("load_checkpoint: tensor '" + name +
                                     "' has shape " + src.shape_str() +
                                     ", expected " + t.shape_str());
        }
        t.data = src.data;
    });
    return ckpt;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct BatchTensors {
    nn::Tensor input;    // [64*B x dim]
    nn::Tensor targets;  // [B x 51]
    std::vector<ChunkSpan> chunks;
    size_t frames = 0;
    size_t pairs = 0;
};

BatchTensors materialize_batch(const PreparedData& data, const Batch& batch,
                               const Normalizer& norm, size_t input_rows,
                               size_t dim) {
    BatchTensors bt;
    for (const auto& piece : batch) bt.frames += piece.len;
    bt.input = nn::Tensor::zeros(input_rows * bt.frames, dim);
    bt.targets = nn::Tensor::zeros(bt.frames, kBlendshapeDim);
    const size_t row_stride = bt.frames * dim;
    size_t b = 0;
    for (const auto& piece : batch) {
        const TrainClip& clip = data.clips[piece.clip];
        bt.chunks.push_back({b, piece.len});
        if (piece.len >= 2) bt.pairs += piece.len - 1;
        for (uint32_t k = 0; k < piece.len; ++k, ++b) {
            materialize_window(clip.grid, piece.first + k, norm,
                               bt.input.data.data() + b * dim, row_stride);
            const BlendshapeFrame& target = clip.targets[piece.first + k];
            std::copy(target.params.begin(), target.params.end(),
                      bt.targets.row(b));
        }
    }
    return bt;
}

std::vector<size_t> frame_counts(const PreparedData& data) {
    std::vector<size_t> counts;
    counts.reserve(data.clips.size());
    for (const auto& c : data.clips) counts.push_back(c.targets.size());
    return counts;
}

double global_grad_norm(const std::map<std::string, nn::Tensor>& grads) {
    double acc = 0.0;
    for (const auto& [name, g] : grads) {
        for (float v : g.data) acc += static_cast<double>(v) * v;
    }
    return std::sqrt(acc);
}

}  // namespace

std::vector<AnimTrack> predict_tracks(const PreparedData& data,
                                      const ModelParams& params,
                                      const Normalizer& norm,
                                      size_t batch_size) {
    std::vector<AnimTrack> tracks(data.clips.size());
    for (size_t c = 0; c < data.clips.size(); ++c) {
        tracks[c].frames.resize(data.clips[c].targets.size());
    }
    const auto batches = make_batches(frame_counts(data), batch_size,
                                      batch_size, 0, false);
    for (const auto& batch : batches) {
        const BatchTensors bt = materialize_batch(
            data, batch, norm, params.config.input_rows,
            params.config.input_cols);
        nn::Graph g;
        ModelGraph<float> mg =
            build_model_graph(g, params, bt.input, bt.frames, false);
        const nn::Tensor& preds = g.val(mg.preds);
        size_t b = 0;
        for (const auto& piece : batch) {
            for (uint32_t k = 0; k < piece.len; ++k, ++b) {
                BlendshapeFrame& f = tracks[piece.clip].frames[piece.first + k];
                for (size_t j = 0; j < kBlendshapeDim; ++j) {
                    f.params[j] = preds.at(b, j);
                }
            }
        }
    }
    return tracks;
}

Checkpoint train(const PreparedData& train_set, const PreparedData& val_set,
                 const TrainConfig& cfg, const FeatureConfig& feature_cfg,
                 const std::string& out_path, std::vector<EpochLog>* log_out,
                 std::ostream* progress) {
    cfg.validate();
    if (train_set.clips.empty() || train_set.total_frames() == 0) {
        throw std::runtime_error("train: empty training set");
    }

    std::vector<const ClipFeatureGrid*> grids;
    for (const auto& c : train_set.clips) grids.push_back(&c.grid);
    const Normalizer norm = fit_normalizer_grids(grids);

    ModelParams params = init_model(cfg.model, cfg.seed);
    AdamState adam = make_adam_state(params);

    std::vector<nn::Tensor*> param_ptrs;
    std::vector<std::string> param_names;
    params.visit([&](const std::string& name, nn::Tensor& t) {
        param_ptrs.push_back(&t);
        param_names.push_back(name);
    });

    const std::vector<size_t> counts = frame_counts(train_set);
    const bool have_val = !val_set.clips.empty() && val_set.total_frames() > 0;

    std::ofstream log_file;
    if (!out_path.empty()) {
        log_file.open(out_path + ".log.csv");
        log_file << "epoch,train_loss,val_loss,val_rmse\n";
    }

    ModelParams best_params = params;
    double best_metric = std::numeric_limits<double>::infinity();
    uint32_t best_epoch = 0;

    for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const uint64_t epoch_seed =
            cfg.seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(epoch));
        const auto batches =
            make_batches(counts, cfg.batch_size, cfg.sequence_chunk, epoch_seed);

        double loss_acc = 0.0;
        size_t frames_acc = 0;
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            const BatchTensors bt =
                materialize_batch(train_set, batches[bi], norm,
                                  cfg.model.input_rows, cfg.model.input_cols);
            std::map<std::string, nn::Tensor> grads;
            double batch_loss = 0.0;
            try {
                nn::Graph g;
                ModelGraph<float> mg =
                    build_model_graph(g, params, bt.input, bt.frames, true);
                auto targets = g.value(bt.targets);
                LossNodes<float> loss =
                    build_total_loss(g, mg.preds, targets, bt.chunks, cfg.loss);
                batch_loss = static_cast<double>(g.val(loss.total).scalar());
                g.backward(loss.total);
                for (const auto& [name, id] : mg.params) {
                    grads.emplace(name, g.grad_of(id));
                }
            } catch (const std::exception& e) {
                throw std::runtime_error(
                    "train: aborted at epoch " + std::to_string(epoch) +
                    " batch " + std::to_string(bi) + ": " + e.what());
            }
            if (!std::isfinite(batch_loss)) {
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + " batch " +
                                         std::to_string(bi));
            }
            loss_acc += batch_loss * static_cast<double>(bt.frames);
            frames_acc += bt.frames;

            if (cfg.grad_clip > 0.0) {
                const double norm2 = global_grad_norm(grads);
                if (norm2 > cfg.grad_clip) {
                    const float scale =
                        static_cast<float>(cfg.grad_clip / norm2);
                    for (auto& [name, g2] : grads) {
                        for (auto& v : g2.data) v *= scale;
                    }
                }
            }

            std::vector<const nn::Tensor*> grad_ptrs;
            grad_ptrs.reserve(param_names.size());
            for (const auto& name : param_names) {
                auto it = grads.find(name);
                if (it == grads.end()) {
                    throw std::runtime_error("train: no gradient for " + name);
                }
                grad_ptrs.push_back(&it->second);
            }
            adam_step(param_ptrs, grad_ptrs, adam, cfg.learning_rate, cfg.beta1,
                      cfg.beta2, cfg.epsilon);
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_acc / static_cast<double>(frames_acc);
        log.val_loss = std::numeric_limits<double>::quiet_NaN();
        log.val_rmse = std::numeric_limits<double>::quiet_NaN();

        if (have_val) {
            // Forward-only pass, ordered chunks, same loss aggregation.
            const auto val_batches =
                make_batches(frame_counts(val_set), cfg.batch_size,
                             cfg.sequence_chunk, 0, false);
            double target_sum = 0.0, smooth_sum = 0.0, se_sum = 0.0;
            size_t vframes = 0, vpairs = 0;
            for (const auto& batch : val_batches) {
                const BatchTensors bt =
                    materialize_batch(val_set, batch, norm,
                                      cfg.model.input_rows, cfg.model.input_cols);
                nn::Graph g;
                ModelGraph<float> mg =
                    build_model_graph(g, params, bt.input, bt.frames, false);
                auto targets = g.value(bt.targets);
                LossNodes<float> loss =
                    build_total_loss(g, mg.preds, targets, bt.chunks, cfg.loss);
                target_sum += static_cast<double>(g.val(loss.target_term).scalar()) *
                              static_cast<double>(bt.frames);
                smooth_sum += static_cast<double>(g.val(loss.smooth_term).scalar()) *
                              static_cast<double>(bt.pairs);
                vframes += bt.frames;
                vpairs += bt.pairs;
                const nn::Tensor& preds = g.val(mg.preds);
                for (size_t i = 0; i < preds.numel(); ++i) {
                    const double e = static_cast<double>(preds.data[i]) -
                                     static_cast<double>(bt.targets.data[i]);
                    se_sum += e * e;
                }
            }
            const double t_term = target_sum / static_cast<double>(vframes);
            const double s_term =
                vpairs > 0 ? smooth_sum / static_cast<double>(vpairs) : 0.0;
            log.val_loss = cfg.loss.w1 * t_term + cfg.loss.w2 * s_term;
            log.val_rmse = std::sqrt(
                se_sum / static_cast<double>(vframes * kBlendshapeDim));
        }

        const double metric = have_val ? log.val_rmse : log.train_loss;
        if (metric < best_metric) {
            best_metric = metric;
            best_epoch = static_cast<uint32_t>(epoch);
            best_params = params;
        }

        if (log_out != nullptr) log_out->push_back(log);
        if (log_file.is_open()) {
            log_file << log.epoch << "," << log.train_loss << "," << log.val_loss
                     << "," << log.val_rmse << "\n";
            log_file.flush();
        }
        if (progress != nullptr &&
            (epoch == 1 || epoch == cfg.epochs || epoch % 10 == 0)) {
            (*progress) << "epoch " << epoch << "/" << cfg.epochs
                        << " train_loss=" << log.train_loss;
            if (have_val) {
                (*progress) << " val_loss=" << log.val_loss
                            << " val_rmse=" << log.val_rmse;
            }
            (*progress) << std::endl;
        }
    }

    Checkpoint final_ckpt;
    final_ckpt.params = params;
    final_ckpt.feature_cfg = feature_cfg;
    final_ckpt.normalizer = norm;
    final_ckpt.epochs_run = static_cast<uint32_t>(cfg.epochs);
    final_ckpt.best_epoch = best_epoch;
    final_ckpt.best_metric = static_cast<float>(best_metric);

    if (!out_path.empty()) {
        save_checkpoint(final_ckpt, out_path);
        Checkpoint best_ckpt = final_ckpt;
        best_ckpt.params = best_params;
        save_checkpoint(best_ckpt, out_path + ".best");
    }
    return final_ckpt;
}

}  // namespace a2f
