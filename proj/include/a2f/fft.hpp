// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace a2f {

// Power-of-two real FFT built on a half-size complex transform. Twiddle and
// bit-reversal tables are precomputed so repeated calls stay cheap.
class RealFft {
 public:
    explicit RealFft(size_t n);

    size_t size() const { return n_; }

    // Power spectrum |X[k]|^2 for k = 0..n/2 (n/2+1 values). The input may be
    // shorter than n; the tail is treated as zeros.
    void power_spectrum(const double* x, size_t len, double* power) const;

 private:
    void complex_fft(double* z) const;  // in-place interleaved re,im, size m_

    size_t n_ = 0;  // real length
    size_t m_ = 0;  // complex length (n/2)
    std::vector<size_t> bitrev_;
    std::vector<double> stage_tw_;   // concatenated per-stage roots (re,im)
    std::vector<double> unpack_tw_;  // e^{-2*pi*i*k/n}, k = 0..m/2 (re,im)
};

}  // namespace a2f
