// SPDX-License-Identifier: Apache-2.0
#include "a2f/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace a2f {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

RealFft::RealFft(size_t n) : n_(n), m_(n / 2) {
    if (n < 4 || (n & (n - 1)) != 0) {
        throw std::runtime_error("RealFft: size must be a power of two >= 4, got " +
                                 std::to_string(n));
    }
    bitrev_.resize(m_);
    size_t bits = 0;
    while ((size_t{1} << bits) < m_) ++bits;
    for (size_t i = 0; i < m_; ++i) {
        size_t r = 0;
        for (size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
        bitrev_[i] = r;
    }
    for (size_t len = 2; len <= m_; len <<= 1) {
        for (size_t j = 0; j < len / 2; ++j) {
            const double ang = -kTwoPi * static_cast<double>(j) /
                               static_cast<double>(len);
            stage_tw_.push_back(std::cos(ang));
            stage_tw_.push_back(std::sin(ang));
        }
    }
    for (size_t k = 0; k <= m_ / 2; ++k) {
        const double ang = -kTwoPi * static_cast<double>(k) /
                           static_cast<double>(n_);
        unpack_tw_.push_back(std::cos(ang));
        unpack_tw_.push_back(std::sin(ang));
    }
}

void RealFft::complex_fft(double* z) const {
    const double* tw = stage_tw_.data();
    for (size_t len = 2; len <= m_; len <<= 1) {
        const size_t half = len / 2;
        for (size_t start = 0; start < m_; start += len) {
            for (size_t j = 0; j < half; ++j) {
                const double wr = tw[2 * j];
                const double wi = tw[2 * j + 1];
                double* a = z + 2 * (start + j);
                double* b = z + 2 * (start + j + half);
                const double tr = b[0] * wr - b[1] * wi;
                const double ti = b[0] * wi + b[1] * wr;
                b[0] = a[0] - tr;
                b[1] = a[1] - ti;
                a[0] += tr;
                a[1] += ti;
            }
        }
        tw += 2 * half;
    }
}

void RealFft::power_spectrum(const double* x, size_t len, double* power) const {
    std::vector<double> z(2 * m_, 0.0);
    // Pack even/odd samples into complex pairs, bit-reversed for the
    // iterative transform.
    for (size_t i = 0; i < m_; ++i) {
        const size_t r = bitrev_[i];
        const size_t e = 2 * i, o = 2 * i + 1;
        z[2 * r] = e < len ? x[e] : 0.0;
        z[2 * r + 1] = o < len ? x[o] : 0.0;
    }
    complex_fft(z.data());

    // Unpack: X[k] = E[k] + e^{-2pi i k/n} O[k], where E/O come from the
    // conjugate-symmetric split of the packed transform.
    const double z0r = z[0], z0i = z[1];
    power[0] = (z0r + z0i) * (z0r + z0i);
    power[m_] = (z0r - z0i) * (z0r - z0i);
    for (size_t k = 1; k <= m_ / 2; ++k) {
        const size_t km = m_ - k;
        const double ar = z[2 * k], ai = z[2 * k + 1];
        const double br = z[2 * km], bi = z[2 * km + 1];
        const double er = 0.5 * (ar + br);
        const double ei = 0.5 * (ai - bi);
        const double or_ = 0.5 * (ai + bi);
        const double oi = -0.5 * (ar - br);
        const double wr = unpack_tw_[2 * k];
        const double wi = unpack_tw_[2 * k + 1];
        const double xr = er + or_ * wr - oi * wi;
        const double xi = ei + or_ * wi + oi * wr;
        power[k] = xr * xr + xi * xi;
        if (km != k && km != m_) {
            // X[m-k] = conj-symmetric partner computed from the same pair.
            const double xr2 = er - (or_ * wr - oi * wi);
            const double xi2 = -ei + or_ * wi + oi * wr;
            power[km] = xr2 * xr2 + xi2 * xi2;
        }
    }
}

}  // namespace a2f
