// SPDX-License-Identifier: Apache-2.0
#include "a2f/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "a2f/parallel.hpp"

namespace a2f {

namespace {

constexpr double kPi = 3.1415926535897932384626433832795;
constexpr double kLogFloor = 1e-10;
constexpr double kMelHighHz = 8000.0;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

void check_frame_len(const std::vector<double>& samples,
                     const FeatureConfig& cfg, const char* who) {
    if (samples.size() != cfg.frame_len_samples) {
        throw std::runtime_error(std::string(who) + ": expected " +
                                 std::to_string(cfg.frame_len_samples) +
                                 " samples, got " +
                                 std::to_string(samples.size()));
    }
}

}  // namespace

void FeatureConfig::validate() const {
    if (frame_len_samples != 2 * hop_samples) {
        throw std::runtime_error(
            "FeatureConfig: frame_len_samples must equal 2*hop_samples, got " +
            std::to_string(frame_len_samples) + " vs hop " +
            std::to_string(hop_samples));
    }
    if (feature_kind == FeatureKind::kMfcc && n_coeffs > n_mel_filters) {
        throw std::runtime_error("FeatureConfig: n_coeffs " +
                                 std::to_string(n_coeffs) +
                                 " exceeds n_mel_filters " +
                                 std::to_string(n_mel_filters));
    }
    if (fft_size < frame_len_samples) {
        throw std::runtime_error("FeatureConfig: fft_size " +
                                 std::to_string(fft_size) +
                                 " smaller than frame length " +
                                 std::to_string(frame_len_samples));
    }
    if (feature_kind == FeatureKind::kLpc && lpc_order == 0) {
        throw std::runtime_error("FeatureConfig: lpc_order must be positive");
    }
}

size_t video_frame_count(const AudioClip& clip) {
    return clip.n_samples() / kSamplesPerVideoFrame;
}

std::vector<double> extract_raw_window(const AudioClip& clip,
                                       size_t frame_index) {
    if (frame_index >= video_frame_count(clip)) {
        throw std::runtime_error("extract_raw_window: frame " +
                                 std::to_string(frame_index) +
                                 " out of range (clip has " +
                                 std::to_string(video_frame_count(clip)) +
                                 " frames)");
    }
    std::vector<double> out(kRawWindowLen, 0.0);
    const int64_t start =
        static_cast<int64_t>(frame_index * kSamplesPerVideoFrame) -
        static_cast<int64_t>(kContextSamples);
    const int64_t n = static_cast<int64_t>(clip.n_samples());
    for (size_t i = 0; i < kRawWindowLen; ++i) {
        const int64_t s = start + static_cast<int64_t>(i);
        if (s >= 0 && s < n) out[i] = clip.samples[static_cast<size_t>(s)];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Extraction engine

struct FeatureExtractor::Impl {
    FeatureConfig cfg;
    RealFft fft;
    std::vector<double> hann;                 // frame_len_samples
    std::vector<size_t> filter_start;         // first FFT bin per mel filter
    std::vector<std::vector<double>> filter;  // triangle weights per filter
    std::vector<double> dct;                  // [n_coeffs x n_mel] row-major

    explicit Impl(const FeatureConfig& c) : cfg(c), fft(c.fft_size) {
        cfg.validate();
        const size_t n = cfg.frame_len_samples;
        hann.resize(n);
        for (size_t i = 0; i < n; ++i) {
            hann[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) /
                                           static_cast<double>(n - 1));
        }

        // Triangular mel bank over [0, 8000] Hz evaluated at FFT bin centers.
        const size_t n_bins = cfg.fft_size / 2 + 1;
        const double bin_hz = static_cast<double>(kSampleRate) /
                              static_cast<double>(cfg.fft_size);
        const double mel_hi = hz_to_mel(kMelHighHz);
        std::vector<double> edges(cfg.n_mel_filters + 2);
        for (size_t i = 0; i < edges.size(); ++i) {
            edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) /
                                 static_cast<double>(cfg.n_mel_filters + 1));
        }
        filter_start.resize(cfg.n_mel_filters);
        filter.resize(cfg.n_mel_filters);
        for (size_t m = 0; m < cfg.n_mel_filters; ++m) {
            const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
            size_t first = n_bins, last = 0;
            for (size_t k = 0; k < n_bins; ++k) {
                const double f = bin_hz * static_cast<double>(k);
                if (f > lo && f < hi) {
                    first = std::min(first, k);
                    last = k;
                }
            }
            if (first > last) {  // degenerate narrow filter
                filter_start[m] = 0;
                continue;
            }
            filter_start[m] = first;
            filter[m].resize(last - first + 1, 0.0);
            for (size_t k = first; k <= last; ++k) {
                const double f = bin_hz * static_cast<double>(k);
                const double w = f <= mid ? (f - lo) / (mid - lo)
                                          : (hi - f) / (hi - mid);
                filter[m][k - first] = std::max(0.0, w);
            }
        }

        // Orthonormal DCT-II, coefficients 0..n_coeffs-1 over n_mel energies.
        const size_t M = cfg.n_mel_filters;
        dct.resize(cfg.n_coeffs * M);
        for (size_t k = 0; k < cfg.n_coeffs; ++k) {
            const double s = k == 0 ? std::sqrt(1.0 / static_cast<double>(M))
                                    : std::sqrt(2.0 / static_cast<double>(M));
            for (size_t m = 0; m < M; ++m) {
                dct[k * M + m] =
                    s * std::cos(kPi * (2.0 * static_cast<double>(m) + 1.0) *
                                 static_cast<double>(k) /
                                 (2.0 * static_cast<double>(M)));
            }
        }
    }

    void mfcc(const double* samples, double* out) const {
        const size_t n = cfg.frame_len_samples;
        std::vector<double> buf(n);
        buf[0] = samples[0];
        for (size_t i = 1; i < n; ++i) {
            buf[i] = samples[i] - cfg.preemphasis * samples[i - 1];
        }
        for (size_t i = 0; i < n; ++i) buf[i] *= hann[i];

        std::vector<double> power(cfg.fft_size / 2 + 1);
        fft.power_spectrum(buf.data(), n, power.data());

        std::vector<double> loge(cfg.n_mel_filters);
        for (size_t m = 0; m < cfg.n_mel_filters; ++m) {
            double e = 0.0;
            const size_t first = filter_start[m];
            for (size_t i = 0; i < filter[m].size(); ++i) {
                e += filter[m][i] * power[first + i];
            }
            loge[m] = std::log(std::max(e, kLogFloor));
        }
        for (size_t k = 0; k < cfg.n_coeffs; ++k) {
            double acc = 0.0;
            const double* row = dct.data() + k * cfg.n_mel_filters;
            for (size_t m = 0; m < cfg.n_mel_filters; ++m) acc += row[m] * loge[m];
            out[k] = acc;
        }
    }

    void lpc(const double* samples, double* out) const {
        const size_t n = cfg.frame_len_samples;
        const size_t p = cfg.lpc_order;
        std::fill(out, out + p, 0.0);

        std::vector<double> r(p + 1, 0.0);
        for (size_t lag = 0; lag <= p; ++lag) {
            double acc = 0.0;
            for (size_t i = lag; i < n; ++i) acc += samples[i] * samples[i - lag];
            r[lag] = acc;
        }
        if (r[0] <= 0.0) return;  // silent frame: documented degenerate case

        // Levinson-Durbin; `a` holds the error-filter coefficients, the
        // prediction coefficients are their negation.
        std::vector<double> a(p + 1, 0.0), tmp(p + 1, 0.0);
        a[0] = 1.0;
        double err = r[0];
        for (size_t i = 1; i <= p; ++i) {
            double acc = r[i];
            for (size_t j = 1; j < i; ++j) acc += a[j] * r[i - j];
            const double k = -acc / err;
            for (size_t j = 0; j < i; ++j) tmp[j] = a[j] + k * a[i - j];
            tmp[i] = k;
            std::copy(tmp.begin(), tmp.begin() + static_cast<long>(i) + 1,
                      a.begin());
            err *= (1.0 - k * k);
            if (err <= 0.0) break;
        }
        for (size_t j = 1; j <= p; ++j) out[j - 1] = -a[j];
    }

    void frame(const double* samples, double* out) const {
        if (cfg.feature_kind == FeatureKind::kMfcc) {
            mfcc(samples, out);
        } else {
            lpc(samples, out);
        }
    }
};

FeatureExtractor::FeatureExtractor(const FeatureConfig& cfg)
    : impl_(std::make_unique<Impl>(cfg)) {}
FeatureExtractor::~FeatureExtractor() = default;
FeatureExtractor::FeatureExtractor(FeatureExtractor&&) noexcept = default;
FeatureExtractor& FeatureExtractor::operator=(FeatureExtractor&&) noexcept =
    default;

const FeatureConfig& FeatureExtractor::config() const { return impl_->cfg; }

void FeatureExtractor::frame_coeffs(const double* samples, double* out) const {
    impl_->frame(samples, out);
}

void FeatureExtractor::grid_frame(const AudioClip& clip, int64_t grid_index,
                                  double* out) const {
    grid_frame(clip.samples.data(), clip.n_samples(), grid_index, out);
}

void FeatureExtractor::grid_frame(const float* samples, size_t n_samples,
                                  int64_t grid_index, double* out) const {
    const size_t n = impl_->cfg.frame_len_samples;
    const int64_t start =
        grid_index * static_cast<int64_t>(impl_->cfg.hop_samples);
    std::vector<double> buf(n, 0.0);
    const int64_t total = static_cast<int64_t>(n_samples);
    for (size_t i = 0; i < n; ++i) {
        const int64_t s = start + static_cast<int64_t>(i);
        if (s >= 0 && s < total) buf[i] = static_cast<double>(samples[s]);
    }
    impl_->frame(buf.data(), out);
}

FeatureWindow FeatureExtractor::window(const AudioClip& clip,
                                       size_t frame_index) const {
    if (frame_index >= video_frame_count(clip)) {
        throw std::runtime_error("feature_window: frame " +
                                 std::to_string(frame_index) + " out of range");
    }
    FeatureWindow w;
    w.frame_index = frame_index;
    w.coeffs = nn::TensorT<double>::zeros(kWindowFrames, impl_->cfg.n_coeffs);
    const int64_t base = static_cast<int64_t>(frame_index) - 32;
    for (size_t r = 0; r < kWindowFrames; ++r) {
        grid_frame(clip, base + static_cast<int64_t>(r), w.coeffs.row(r));
    }
    return w;
}

// ---------------------------------------------------------------------------
// Free-function forms

std::vector<double> mfcc_frame(const std::vector<double>& samples,
                               const FeatureConfig& cfg) {
    check_frame_len(samples, cfg, "mfcc_frame");
    FeatureConfig c = cfg;
    c.feature_kind = FeatureKind::kMfcc;
    FeatureExtractor ex(c);
    std::vector<double> out(c.n_coeffs);
    ex.frame_coeffs(samples.data(), out.data());
    return out;
}

std::vector<double> lpc_frame(const std::vector<double>& samples,
                              const FeatureConfig& cfg) {
    check_frame_len(samples, cfg, "lpc_frame");
    FeatureConfig c = cfg;
    c.feature_kind = FeatureKind::kLpc;
    c.n_coeffs = c.lpc_order;
    FeatureExtractor ex(c);
    std::vector<double> out(c.lpc_order);
    ex.frame_coeffs(samples.data(), out.data());
    return out;
}

FeatureWindow feature_window(const AudioClip& clip, size_t frame_index,
                             const FeatureConfig& cfg) {
    FeatureExtractor ex(cfg);
    return ex.window(clip, frame_index);
}

ClipFeatureGrid build_feature_grid(const AudioClip& clip,
                                   const FeatureConfig& cfg) {
    FeatureExtractor ex(cfg);
    ClipFeatureGrid grid;
    grid.n_frames = video_frame_count(clip);
    const size_t n_rows = grid.n_frames + kWindowFrames - 1;
    grid.rows = nn::TensorT<double>::zeros(n_rows, cfg.n_coeffs);
    parallel_for(n_rows, 8, [&](size_t r0, size_t r1) {
        for (size_t r = r0; r < r1; ++r) {
            ex.grid_frame(clip, static_cast<int64_t>(r) - 32, grid.rows.row(r));
        }
    });
    return grid;
}

// ---------------------------------------------------------------------------
// Normalizer

Normalizer Normalizer::identity(size_t dim) {
    Normalizer n;
    n.mean.assign(dim, 0.0f);
    n.std.assign(dim, 1.0f);
    return n;
}

namespace {

Normalizer finish_stats(const std::vector<double>& sum,
                        const std::vector<double>& sumsq, double count) {
    Normalizer n;
    const size_t dim = sum.size();
    n.mean.resize(dim);
    n.std.resize(dim);
    for (size_t j = 0; j < dim; ++j) {
        const double mean = sum[j] / count;
        const double var = std::max(0.0, sumsq[j] / count - mean * mean);
        n.mean[j] = static_cast<float>(mean);
        n.std[j] = static_cast<float>(std::sqrt(var));
    }
    return n;
}

}  // namespace

Normalizer fit_normalizer(const std::vector<FeatureWindow>& windows) {
    if (windows.empty()) {
        throw std::runtime_error("fit_normalizer: empty window collection");
    }
    const size_t dim = windows[0].coeffs.cols();
    std::vector<double> sum(dim, 0.0), sumsq(dim, 0.0);
    double count = 0.0;
    for (const auto& w : windows) {
        for (size_t r = 0; r < w.coeffs.rows(); ++r) {
            const double* row = w.coeffs.row(r);
            for (size_t j = 0; j < dim; ++j) {
                sum[j] += row[j];
                sumsq[j] += row[j] * row[j];
            }
        }
        count += static_cast<double>(w.coeffs.rows());
    }
    return finish_stats(sum, sumsq, count);
}

Normalizer fit_normalizer_grids(
    const std::vector<const ClipFeatureGrid*>& grids) {
    if (grids.empty()) {
        throw std::runtime_error("fit_normalizer_grids: no grids");
    }
    const size_t dim = grids[0]->rows.cols();
    std::vector<double> sum(dim, 0.0), sumsq(dim, 0.0);
    double count = 0.0;
    for (const ClipFeatureGrid* g : grids) {
        const int64_t F = static_cast<int64_t>(g->n_frames);
        for (int64_t j = -32; j < F + 31; ++j) {
            // Number of windows i in [0,F) with i-32 <= j <= i+31.
            const int64_t lo = std::max<int64_t>(0, j - 31);
            const int64_t hi = std::min<int64_t>(F - 1, j + 32);
            const double w = static_cast<double>(hi - lo + 1);
            if (w <= 0) continue;
            const double* row = g->grid_row(j);
            for (size_t k = 0; k < dim; ++k) {
                sum[k] += w * row[k];
                sumsq[k] += w * row[k] * row[k];
            }
            count += w;
        }
    }
    return finish_stats(sum, sumsq, count);
}

FeatureWindow apply_normalizer(const FeatureWindow& window,
                               const Normalizer& norm) {
    if (norm.mean.size() != window.coeffs.cols()) {
        throw std::runtime_error("apply_normalizer: dim mismatch " +
                                 std::to_string(norm.mean.size()) + " vs " +
                                 std::to_string(window.coeffs.cols()));
    }
    FeatureWindow out = window;
    for (size_t r = 0; r < out.coeffs.rows(); ++r) {
        double* row = out.coeffs.row(r);
        for (size_t j = 0; j < out.coeffs.cols(); ++j) {
            const double s = std::max(static_cast<double>(norm.std[j]), 1e-8);
            row[j] = (row[j] - static_cast<double>(norm.mean[j])) / s;
        }
    }
    return out;
}

void materialize_window(const ClipFeatureGrid& grid, size_t frame_index,
                        const Normalizer& norm, float* out, size_t row_stride) {
    const size_t dim = grid.rows.cols();
    const int64_t base = static_cast<int64_t>(frame_index) - 32;
    for (size_t r = 0; r < kWindowFrames; ++r) {
        const double* src = grid.grid_row(base + static_cast<int64_t>(r));
        float* dst = out + r * row_stride;
        for (size_t j = 0; j < dim; ++j) {
            const double s = std::max(static_cast<double>(norm.std[j]), 1e-8);
            dst[j] = static_cast<float>((src[j] -
                                         static_cast<double>(norm.mean[j])) / s);
        }
    }
}

// ---------------------------------------------------------------------------
// Feature dump ("A2FF")

namespace {

void write_u32(std::ofstream& f, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff),
                 static_cast<char>((v >> 24) & 0xff)};
    f.write(b, 4);
}

uint32_t read_u32_file(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error("feature dump: truncated file " + path);
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_feature_dump(const std::string& path,
                        const std::vector<FeatureWindow>& windows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("feature dump: cannot open " + path);
    f.write("A2FF", 4);
    write_u32(f, 1);
    write_u32(f, static_cast<uint32_t>(windows.size()));
    const uint32_t rows = windows.empty()
                              ? static_cast<uint32_t>(kWindowFrames)
                              : static_cast<uint32_t>(windows[0].coeffs.rows());
    const uint32_t cols = windows.empty()
                              ? static_cast<uint32_t>(kFeatureDim)
                              : static_cast<uint32_t>(windows[0].coeffs.cols());
    write_u32(f, rows);
    write_u32(f, cols);
    for (const auto& w : windows) {
        for (double v : w.coeffs.data) {
            const float x = static_cast<float>(v);
            uint32_t bits;
            std::memcpy(&bits, &x, 4);
            write_u32(f, bits);
        }
    }
    if (!f) throw std::runtime_error("feature dump: write failed for " + path);
}

std::vector<FeatureWindow> read_feature_dump(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("feature dump: cannot open " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "A2FF", 4) != 0) {
        throw std::runtime_error("feature dump: bad magic in " + path);
    }
    const uint32_t version = read_u32_file(f, path);
    if (version != 1) {
        throw std::runtime_error("feature dump: unsupported version " +
                                 std::to_string(version) + " in " + path);
    }
    const uint32_t n = read_u32_file(f, path);
    const uint32_t rows = read_u32_file(f, path);
    const uint32_t cols = read_u32_file(f, path);
    std::vector<FeatureWindow> out(n);
    for (uint32_t i = 0; i < n; ++i) {
        out[i].frame_index = i;
        out[i].coeffs = nn::TensorT<double>::zeros(rows, cols);
        for (auto& v : out[i].coeffs.data) {
            const uint32_t bits = read_u32_file(f, path);
            float x;
            std::memcpy(&x, &bits, 4);
            v = static_cast<double>(x);
        }
    }
    return out;
}

}  // namespace a2f
