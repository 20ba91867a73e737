// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace a2f {

constexpr int kSampleRate = 44100;
constexpr int kFps = 30;
constexpr size_t kSamplesPerVideoFrame = 1470;  // 44100 / 30

// Mono PCM audio, samples normalized to [-1,1].
struct AudioClip {
    std::vector<float> samples;
    int sample_rate = kSampleRate;

    size_t n_samples() const { return samples.size(); }
    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

// Reads a RIFF/WAVE file. Only PCM 16-bit mono 44.1 kHz is accepted; anything
// else fails with a message naming the offending property.
AudioClip load_wav(const std::string& path);

// Writes PCM 16-bit mono 44.1 kHz. Samples are clamped to [-1,1].
void save_wav(const std::string& path, const std::vector<float>& samples);

}  // namespace a2f
