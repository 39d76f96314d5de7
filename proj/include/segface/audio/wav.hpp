#pragma once

// Minimal RIFF/WAVE reader and writer for 16-bit mono PCM. No resampling:
// callers get the file's sample rate and decide whether it is acceptable.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "segface/common.hpp"

namespace segface {

struct WavData {
    int sample_rate = 0;
    std::vector<float> samples;  // [-1, 1]
};

namespace detail {
inline uint32_t rd_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t rd_u16(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
inline void wr_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<char*>(b), 4);
}
inline void wr_u16(std::ofstream& f, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    f.write(reinterpret_cast<char*>(b), 2);
}
}  // namespace detail

inline WavData read_wav(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw IoError(path.string() + ": not a RIFF/WAVE file");

    WavData out;
    int channels = 0, bits = 0;
    size_t pos = 12;
    bool got_fmt = false, got_data = false;
    while (pos + 8 <= bytes.size()) {
        uint32_t sz = detail::rd_u32(bytes.data() + pos + 4);
        if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0 && pos + 8 + 16 <= bytes.size()) {
            const unsigned char* p = bytes.data() + pos + 8;
            uint16_t fmt = detail::rd_u16(p);
            channels = detail::rd_u16(p + 2);
            out.sample_rate = static_cast<int>(detail::rd_u32(p + 4));
            bits = detail::rd_u16(p + 14);
            if (fmt != 1) throw IoError(path.string() + ": only PCM wav supported");
            got_fmt = true;
        } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
            if (!got_fmt) throw IoError(path.string() + ": data chunk before fmt");
            if (channels != 1) throw InvalidInput(path.string() + ": mono audio required, got " +
                                                  std::to_string(channels) + " channels");
            if (bits != 16) throw InvalidInput(path.string() + ": 16-bit PCM required, got " +
                                               std::to_string(bits) + " bits");
            size_t n = std::min<size_t>(sz, bytes.size() - pos - 8) / 2;
            out.samples.resize(n);
            const unsigned char* p = bytes.data() + pos + 8;
            for (size_t i = 0; i < n; ++i) {
                int16_t s = static_cast<int16_t>(p[2 * i] | (p[2 * i + 1] << 8));
                out.samples[i] = static_cast<float>(s) / 32768.0f;
            }
            got_data = true;
        }
        pos += 8 + sz + (sz & 1);
    }
    if (!got_data) throw IoError(path.string() + ": no data chunk");
    return out;
}

inline void write_wav(const std::filesystem::path& path, const std::vector<float>& samples,
                      int sample_rate) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
    f.write("RIFF", 4);
    detail::wr_u32(f, 36 + data_bytes);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    detail::wr_u32(f, 16);
    detail::wr_u16(f, 1);  // PCM
    detail::wr_u16(f, 1);  // mono
    detail::wr_u32(f, static_cast<uint32_t>(sample_rate));
    detail::wr_u32(f, static_cast<uint32_t>(sample_rate * 2));
    detail::wr_u16(f, 2);
    detail::wr_u16(f, 16);
    f.write("data", 4);
    detail::wr_u32(f, data_bytes);
    for (float s : samples) {
        float c = std::clamp(s, -1.0f, 1.0f);
        int16_t q = static_cast<int16_t>(std::lround(c * 32767.0f));
        detail::wr_u16(f, static_cast<uint16_t>(q));
    }
    if (!f) throw IoError("short write to " + path.string());
}

}  // namespace segface
