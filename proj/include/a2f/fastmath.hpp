// SPDX-License-Identifier: Apache-2.0
//
// Branch-free float transcendentals for the float training/inference path.
// Pure functions of their input bits, so results are deterministic; relative
// error is ~2e-7, below float32 round-off for the sizes involved. The double
// graph keeps libm.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>

namespace a2f {
namespace fastmath {

// exp(x) as 2^k * 2^f with a degree-5 exp2 polynomial on f in [0,1).
// Exact at x = 0. Input clamped to +-87, output always positive and finite.
inline float exp_f(float x) {
    x = std::min(87.0f, std::max(-87.0f, x));
    const float t = x * 1.44269504088896341f;
    const float fk = std::floor(t);
    const float f = t - fk;
    float p = 1.8762334844894548e-3f;
    p = p * f + 8.9925826979921318e-3f;
    p = p * f + 5.5823605612489148e-2f;
    p = p * f + 2.4015452948358545e-1f;
    p = p * f + 6.9315296822575068e-1f;
    p = p * f + 1.0f;
    const int32_t k = static_cast<int32_t>(fk);
    const uint32_t bits = static_cast<uint32_t>(k + 127) << 23;
    float scale;
    std::memcpy(&scale, &bits, 4);
    return p * scale;
}

inline float sigmoid_f(float x) { return 1.0f / (1.0f + exp_f(-x)); }

// (1 - e) / (1 + e) with e = exp(-2x) > 0 keeps |tanh| < 1 strictly.
inline float tanh_f(float x) {
    const float e = exp_f(-2.0f * x);
    return (1.0f - e) / (1.0f + e);
}

}  // namespace fastmath
}  // namespace a2f
