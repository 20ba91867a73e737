// SPDX-License-Identifier: Apache-2.0
#include "a2f/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace a2f {

namespace {

uint32_t read_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& s, uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

AudioClip load_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_wav: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw std::runtime_error("load_wav: " + path + " is not a RIFF/WAVE file");
    }

    bool have_fmt = false;
    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    const uint8_t* data = nullptr;
    size_t data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const uint8_t* hdr = bytes.data() + pos;
        const uint32_t chunk_len = read_u32(hdr + 4);
        const size_t body = pos + 8;
        if (body + chunk_len > bytes.size()) {
            throw std::runtime_error("load_wav: truncated chunk in " + path);
        }
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (chunk_len < 16) {
                throw std::runtime_error("load_wav: malformed fmt chunk in " + path);
            }
            format = read_u16(bytes.data() + body);
            channels = read_u16(bytes.data() + body + 2);
            rate = read_u32(bytes.data() + body + 4);
            bits = read_u16(bytes.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            data = bytes.data() + body;
            data_len = chunk_len;
        }
        pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }

    if (!have_fmt || data == nullptr) {
        throw std::runtime_error("load_wav: missing fmt or data chunk in " + path);
    }
    if (format != 1) {
        throw std::runtime_error("load_wav: unsupported encoding (want PCM) in " +
                                 path);
    }
    if (channels != 1) {
        throw std::runtime_error("load_wav: unsupported channel count " +
                                 std::to_string(channels) + " (want mono) in " +
                                 path);
    }
    if (rate != static_cast<uint32_t>(kSampleRate)) {
        throw std::runtime_error("load_wav: unsupported sample rate " +
                                 std::to_string(rate) + " (want 44100) in " +
                                 path);
    }
    if (bits != 16) {
        throw std::runtime_error("load_wav: unsupported bit depth " +
                                 std::to_string(bits) + " (want 16) in " + path);
    }

    AudioClip clip;
    clip.samples.resize(data_len / 2);
    for (size_t i = 0; i < clip.samples.size(); ++i) {
        const int16_t v = static_cast<int16_t>(
            static_cast<uint16_t>(data[2 * i] | (data[2 * i + 1] << 8)));
        clip.samples[i] = static_cast<float>(v) / 32768.0f;
    }
    return clip;
}

void save_wav(const std::string& path, const std::vector<float>& samples) {
    const uint32_t data_len = static_cast<uint32_t>(samples.size() * 2);
    std::string out;
    out.reserve(44 + data_len);
    out += "RIFF";
    put_u32(out, 36 + data_len);
    out += "WAVE";
    out += "fmt ";
    put_u32(out, 16);
    put_u16(out, 1);   // PCM
    put_u16(out, 1);   // mono
    put_u32(out, kSampleRate);
    put_u32(out, kSampleRate * 2);  // byte rate
    put_u16(out, 2);   // block align
    put_u16(out, 16);  // bits
    out += "data";
    put_u32(out, data_len);
    // Scale mirrors the reader's /32768, so int16-derived samples round-trip
    // bit-exactly.
    for (float s : samples) {
        const float c = std::clamp(s, -1.0f, 1.0f);
        const int32_t q = static_cast<int32_t>(std::lround(c * 32768.0f));
        put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(
                         std::clamp(q, -32768, 32767))));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_wav: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("save_wav: write failed for " + path);
}

}  // namespace a2f
