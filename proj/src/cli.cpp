// SPDX-License-Identifier: Apache-2.0
#include "a2f/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "a2f/inference.hpp"
#include "a2f/objectives.hpp"
#include "a2f/trainer.hpp"

namespace a2f {
namespace cli {

namespace {

int cmd_features(const std::string& wav_path, const std::string& out_path,
                 bool lpc) {
    FeatureConfig cfg;
    if (lpc) {
        cfg.feature_kind = FeatureKind::kLpc;
        cfg.n_coeffs = cfg.lpc_order;
    }
    const AudioClip clip = load_wav(wav_path);
    FeatureExtractor ex(cfg);
    std::vector<FeatureWindow> windows;
    windows.reserve(video_frame_count(clip));
    for (size_t i = 0; i < video_frame_count(clip); ++i) {
        windows.push_back(ex.window(clip, i));
    }
    write_feature_dump(out_path, windows);
    std::cout << "wrote " << windows.size() << " windows to " << out_path
              << "\n";
    return 0;
}

int cmd_synth(uint64_t seed, double minutes, const std::string& out_dir,
              size_t clips) {
    if (minutes <= 0.0) throw std::runtime_error("synth: minutes must be > 0");
    if (clips < 1) throw std::runtime_error("synth: clips must be >= 1");
    std::filesystem::create_directories(out_dir);
    const double per_clip_s = minutes * 60.0 / static_cast<double>(clips);
    // One face mapping for the whole dataset; only the audio varies per clip.
    const SynthOracle oracle = make_synth_oracle(seed);
    std::vector<ManifestEntry> manifest;
    for (size_t i = 0; i < clips; ++i) {
        const uint64_t clip_seed = seed + 1000003ull * i;
        const SynthResult synth = synth_generate(clip_seed, per_clip_s, oracle);
        char stem[64];
        std::snprintf(stem, sizeof(stem), "synth_%llu_%02zu",
                      static_cast<unsigned long long>(seed), i);
        const std::string base = out_dir + "/" + stem;
        save_wav(base + ".wav", synth.clip.samples);
        save_track(base + "_track.csv", synth.track);
        save_oracle(base + "_oracle.csv", synth.oracle);
        manifest.push_back({base + ".wav", base + "_track.csv", "train"});
        std::cout << "clip " << i << ": " << synth.track.size() << " frames, "
                  << base << ".wav\n";
    }
    save_manifest(out_dir + "/manifest.txt", manifest);
    std::cout << "manifest: " << out_dir << "/manifest.txt\n";
    return 0;
}

int cmd_train(const std::string& data_path, const std::string& out_path,
              size_t nodes, size_t epochs, double lr, size_t batch, double w1,
              double w2, double delta, uint64_t seed, bool no_attention,
              bool unidirectional, bool lpc) {
    FeatureConfig fcfg;
    if (lpc) {
        fcfg.feature_kind = FeatureKind::kLpc;
        fcfg.n_coeffs = fcfg.lpc_order;
    }
    TrainConfig cfg;
    cfg.model.hidden_size = nodes;
    cfg.model.use_attention = !no_attention;
    cfg.model.bidirectional = !unidirectional;
    cfg.model.input_cols = fcfg.n_coeffs;
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.batch_size = batch;
    cfg.loss.w1 = w1;
    cfg.loss.w2 = w2;
    cfg.loss.delta = delta;
    cfg.seed = seed;

    const auto entries = load_manifest(data_path);
    std::cout << "preparing features for " << entries.size() << " clips...\n";
    const PreparedData train_set = prepare_split(entries, "train", fcfg);
    const PreparedData val_set = prepare_split(entries, "val", fcfg);
    std::cout << "train frames: " << train_set.total_frames()
              << ", val frames: " << val_set.total_frames() << "\n";

    train(train_set, val_set, cfg, fcfg, out_path, nullptr, &std::cout);
    std::cout << "final checkpoint: " << out_path << "\n";
    std::cout << "best checkpoint:  " << out_path << ".best\n";
    std::cout << "training log:     " << out_path << ".log.csv\n";
    return 0;
}

int cmd_infer(const std::string& model_path, const std::string& wav_path,
              const std::string& out_path, bool blink,
              const std::string& rigmap_path, bool stream, uint64_t seed) {
    const Checkpoint ckpt = load_checkpoint(model_path);
    const AudioClip clip = load_wav(wav_path);

    AnimTrack track;
    if (stream) {
        // Pipe the file through the streaming path in ~33 ms chunks.
        size_t pos = 0;
        AudioSource source = [&](float* buf, size_t max) -> size_t {
            const size_t n = std::min({max, size_t{1470},
                                       clip.n_samples() - pos});
            std::copy(clip.samples.begin() + static_cast<long>(pos),
                      clip.samples.begin() + static_cast<long>(pos + n), buf);
            pos += n;
            return n;
        };
        FrameSink sink = [&](size_t, const BlendshapeFrame& f) {
            track.frames.push_back(f);
        };
        const LatencyReport report = stream_infer(source, ckpt, sink);
        std::cerr << format_latency_table(report);
    } else {
        track = infer_track(clip, ckpt);
    }

    if (blink) track = blink_inject(track, BlinkConfig{}, seed);

    if (!rigmap_path.empty()) {
        const RigMap map = load_rigmap(rigmap_path);
        save_retargeted_csv(out_path, retarget(track, map));
    } else {
        save_track(out_path, track);
    }
    std::cout << "wrote " << track.size() << " frames to " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& ref_path) {
    const AnimTrack pred = load_track(pred_path);
    const AnimTrack ref = load_track(ref_path);
    std::printf("rmse=%.4f\n", rmse(pred, ref));
    if (pred.size() >= 2) {
        std::printf("jitter_pred=%.6f\n", jitter(pred));
        std::printf("jitter_ref=%.6f\n", jitter(ref));
    }
    return 0;
}

int cmd_bench(const std::string& model_path, size_t windows, uint64_t seed,
              const std::string& csv_path) {
    const Checkpoint ckpt = load_checkpoint(model_path);
    const LatencyReport report = bench(ckpt, windows, seed);
    std::cout << format_latency_table(report);
    if (!csv_path.empty()) {
        write_latency_csv(csv_path, report);
        std::cout << "per-window csv: " << csv_path << "\n";
    }
    return 0;
}

}  // namespace

int run(std::vector<std::string> args) {
    CLI::App app{"speech-driven blendshape animation (attention bi-LSTM)"};
    app.require_subcommand(1);

    // features
    auto* features = app.add_subcommand("features",
                                        "dump per-frame feature windows");
    std::string f_wav, f_out;
    bool f_lpc = false;
    features->add_option("--wav", f_wav, "input WAV (PCM16 mono 44.1 kHz)")
        ->required();
    features->add_option("--out", f_out, "output feature dump")->required();
    features->add_flag("--lpc", f_lpc, "LPC coefficients instead of MFCC");

    // synth
    auto* synth = app.add_subcommand("synth", "generate synthetic audio+track");
    uint64_t s_seed = 0;
    double s_minutes = 1.0;
    std::string s_out;
    size_t s_clips = 1;
    synth->add_option("--seed", s_seed, "generator seed")->required();
    synth->add_option("--minutes", s_minutes, "total minutes of audio")
        ->required();
    synth->add_option("--out", s_out, "output directory")->required();
    synth->add_option("--clips", s_clips, "number of clips to split into");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string t_data, t_out;
    size_t t_nodes = 256, t_epochs = 500, t_batch = 100;
    double t_lr = 1e-4, t_w1 = 1.0, t_w2 = 0.5, t_delta = 1.0;
    uint64_t t_seed = 1;
    bool t_noattn = false, t_uni = false, t_lpc = false;
    train_cmd->add_option("--data", t_data, "manifest file")->required();
    train_cmd->add_option("--out", t_out, "checkpoint output path")->required();
    train_cmd->add_option("--nodes", t_nodes, "hidden nodes per layer")
        ->check(CLI::IsMember({128, 256, 512}));
    train_cmd->add_option("--epochs", t_epochs, "training epochs");
    train_cmd->add_option("--lr", t_lr, "learning rate");
    train_cmd->add_option("--batch", t_batch, "minibatch size (frames)");
    train_cmd->add_option("--w1", t_w1, "target loss weight");
    train_cmd->add_option("--w2", t_w2, "smooth loss weight");
    train_cmd->add_option("--delta", t_delta, "Huber threshold");
    train_cmd->add_option("--seed", t_seed, "training seed");
    train_cmd->add_flag("--no-attention", t_noattn,
                        "pool with the last timestep instead of attention");
    train_cmd->add_flag("--unidirectional", t_uni,
                        "forward-only LSTM layers");
    train_cmd->add_flag("--lpc", t_lpc, "train on LPC features");

    // infer
    auto* infer = app.add_subcommand("infer", "run a model over a WAV");
    std::string i_model, i_wav, i_out, i_rigmap;
    bool i_blink = false, i_stream = false;
    uint64_t i_seed = 1;
    infer->add_option("--model", i_model, "checkpoint path")->required();
    infer->add_option("--wav", i_wav, "input WAV")->required();
    infer->add_option("--out", i_out, "output track CSV")->required();
    infer->add_flag("--blink", i_blink, "inject periodic blinks");
    infer->add_option("--rigmap", i_rigmap, "retarget with this rig map");
    infer->add_flag("--stream", i_stream,
                    "use the streaming path and report latency");
    infer->add_option("--seed", i_seed, "seed (blink jitter)");

    // eval
    auto* eval = app.add_subcommand("eval", "compare two tracks");
    std::string e_pred, e_ref;
    eval->add_option("--pred", e_pred, "predicted track CSV")->required();
    eval->add_option("--ref", e_ref, "reference track CSV")->required();

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "measure per-window latency");
    std::string b_model, b_csv;
    size_t b_windows = 300;
    uint64_t b_seed = 1;
    bench_cmd->add_option("--model", b_model, "checkpoint path")->required();
    bench_cmd->add_option("--windows", b_windows, "windows to measure");
    bench_cmd->add_option("--seed", b_seed, "audio seed");
    bench_cmd->add_option("--csv", b_csv, "write per-window CSV here");

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (features->parsed()) return cmd_features(f_wav, f_out, f_lpc);
        if (synth->parsed()) return cmd_synth(s_seed, s_minutes, s_out, s_clips);
        if (train_cmd->parsed()) {
            return cmd_train(t_data, t_out, t_nodes, t_epochs, t_lr, t_batch,
                             t_w1, t_w2, t_delta, t_seed, t_noattn, t_uni,
                             t_lpc);
        }
        if (infer->parsed()) {
            return cmd_infer(i_model, i_wav, i_out, i_blink, i_rigmap, i_stream,
                             i_seed);
        }
        if (eval->parsed()) return cmd_eval(e_pred, e_ref);
        if (bench_cmd->parsed()) return cmd_bench(b_model, b_windows, b_seed,
                                                  b_csv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace cli
}  // namespace a2f
