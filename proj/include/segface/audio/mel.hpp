#pragma once

// Mel-spectrogram front end. Conventions, pinned for reproducibility:
// 16 kHz input only (no silent resampling), 50 ms periodic-Hann window,
// 12.5 ms hop, 1024-point FFT, 80 HTK-mel triangular filters over
// [0, 8000] Hz, natural-log energies floored at 1e-5.

#include <array>
#include <complex>
#include <filesystem>
#include <fstream>

#include "segface/core/tensor.hpp"

namespace segface {

struct MelConfig {
    int sample_rate = 16000;
    int win_samples = 800;   // 50 ms
    int hop_samples = 200;   // 12.5 ms
    int fft_size = 1024;
    int mel_bins = 80;
    float fmin = 0.0f;
    float fmax = 8000.0f;
    float log_floor = 1e-5f;
};

struct MelSpectrogram {
    Tensor frames;  // (T_mel, 80) natural-log mel energies
    MelConfig config;

    int num_frames() const { return frames.dim(0); }
    int num_bins() const { return frames.dim(1); }
};

// One 0.2 s slice (16 mel rows) associated with a video frame at 25 fps.
struct AudioWindow {
    Tensor segment;  // (16, 80)
    int center_video_frame = 0;
    bool padded = false;  // true when part of the slice fell past the clip end
};

constexpr int kMelWindowFrames = 16;  // 0.2 s at 12.5 ms hop
constexpr double kMelFramesPerVideoFrame = 3.2;  // 80 mel fps / 25 video fps

namespace detail {

// Iterative radix-2 complex FFT (size must be a power of two).
inline void fft_radix2(std::vector<std::complex<float>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
        std::complex<float> wl(static_cast<float>(std::cos(ang)), static_cast<float>(std::sin(ang)));
        for (size_t i = 0; i < n; i += len) {
            std::complex<float> w(1.0f, 0.0f);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<float> u = a[i + k];
                std::complex<float> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

inline float hz_to_mel(float hz) { return 2595.0f * std::log10(1.0f + hz / 700.0f); }
inline float mel_to_hz(float mel) { return 700.0f * (std::pow(10.0f, mel / 2595.0f) - 1.0f); }

inline std::vector<float> mel_filterbank(const MelConfig& cfg) {
    const int n_bins = cfg.fft_size / 2 + 1;
    std::vector<float> fb(static_cast<size_t>(cfg.mel_bins) * n_bins, 0.0f);
    const float mlo = hz_to_mel(cfg.fmin), mhi = hz_to_mel(cfg.fmax);
    std::vector<float> hz(static_cast<size_t>(cfg.mel_bins) + 2);
    for (int i = 0; i < cfg.mel_bins + 2; ++i)
        hz[static_cast<size_t>(i)] =
            mel_to_hz(mlo + (mhi - mlo) * static_cast<float>(i) / static_cast<float>(cfg.mel_bins + 1));
    const float bin_hz = static_cast<float>(cfg.sample_rate) / static_cast<float>(cfg.fft_size);
    for (int m = 0; m < cfg.mel_bins; ++m) {
        float lo = hz[static_cast<size_t>(m)], mid = hz[static_cast<size_t>(m) + 1],
              hi = hz[static_cast<size_t>(m) + 2];
        for (int k = 0; k < n_bins; ++k) {
            float f = bin_hz * static_cast<float>(k);
            float v = 0.0f;
            if (f > lo && f < mid) v = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi) v = (hi - f) / (hi - mid);
            fb[static_cast<size_t>(m) * n_bins + k] = v;
        }
    }
    return fb;
}

}  // namespace detail

inline int mel_frame_count(int64_t num_samples, const MelConfig& cfg = {}) {
    if (num_samples < cfg.win_samples) return 0;
    return static_cast<int>((num_samples - cfg.win_samples) / cfg.hop_samples) + 1;
}

inline MelSpectrogram compute_mel(const std::vector<float>& waveform, int sample_rate,
                                  const MelConfig& cfg = {}) {
    if (sample_rate != cfg.sample_rate)
        throw InvalidInput("compute_mel: expected " + std::to_string(cfg.sample_rate) +
                           " Hz input, got " + std::to_string(sample_rate) +
                           " (resampling is out of scope)");
    if (static_cast<int64_t>(waveform.size()) < cfg.win_samples)
        throw InvalidInput("compute_mel: input shorter than one window (" +
                           std::to_string(cfg.win_samples) + " samples)");

    const int t_mel = mel_frame_count(static_cast<int64_t>(waveform.size()), cfg);
    const int n_bins = cfg.fft_size / 2 + 1;
    static thread_local std::vector<float> fb;
    static thread_local MelConfig fb_cfg;
    if (fb.empty() || fb_cfg.mel_bins != cfg.mel_bins || fb_cfg.fft_size != cfg.fft_size ||
        fb_cfg.fmax != cfg.fmax || fb_cfg.sample_rate != cfg.sample_rate) {
        fb = detail::mel_filterbank(cfg);
        fb_cfg = cfg;
    }

    std::vector<float> window(static_cast<size_t>(cfg.win_samples));
    for (int i = 0; i < cfg.win_samples; ++i)
        window[static_cast<size_t>(i)] = 0.5f - 0.5f * std::cos(2.0f * 3.14159265358979f *
                                                                static_cast<float>(i) /
                                                                static_cast<float>(cfg.win_samples));

    MelSpectrogram out;
    out.config = cfg;
    out.frames = Tensor({t_mel, cfg.mel_bins});
    std::vector<std::complex<float>> buf(static_cast<size_t>(cfg.fft_size));
    std::vector<float> power(static_cast<size_t>(n_bins));
    for (int t = 0; t < t_mel; ++t) {
        const float* src = waveform.data() + static_cast<int64_t>(t) * cfg.hop_samples;
        for (int i = 0; i < cfg.fft_size; ++i)
            buf[static_cast<size_t>(i)] = i < cfg.win_samples
                                              ? std::complex<float>(src[i] * window[static_cast<size_t>(i)], 0.0f)
                                              : std::complex<float>(0.0f, 0.0f);
        detail::fft_radix2(buf);
        for (int k = 0; k < n_bins; ++k) power[static_cast<size_t>(k)] = std::norm(buf[static_cast<size_t>(k)]);
        for (int m = 0; m < cfg.mel_bins; ++m) {
            double e = 0.0;
            const float* w = fb.data() + static_cast<size_t>(m) * n_bins;
            for (int k = 0; k < n_bins; ++k) e += static_cast<double>(w[k]) * power[static_cast<size_t>(k)];
            out.frames.at(t, m) = std::log(std::max(static_cast<float>(e), cfg.log_floor));
        }
    }
    return out;
}

// Mel rows for the 0.2 s segment associated with a 25 fps video frame.
// Start row = round-half-up(frame * 3.2); rows past the end are zero-padded
// and flagged.
inline AudioWindow window_for_frame(const MelSpectrogram& mel, int frame_idx) {
    if (frame_idx < 0) throw InvalidInput("window_for_frame: negative frame index");
    const int start = round_half_up(static_cast<double>(frame_idx) * kMelFramesPerVideoFrame);
    const int t_mel = mel.num_frames();
    if (start >= t_mel)
        throw InvalidInput("window_for_frame: frame " + std::to_string(frame_idx) +
                           " entirely past the mel spectrogram (" + std::to_string(t_mel) +
                           " rows)");
    AudioWindow win;
    win.center_video_frame = frame_idx;
    win.segment = Tensor({kMelWindowFrames, mel.num_bins()});
    for (int r = 0; r < kMelWindowFrames; ++r) {
        int src = start + r;
        if (src >= t_mel) {
            win.padded = true;
            continue;  // stays zero
        }
        for (int m = 0; m < mel.num_bins(); ++m) win.segment.at(r, m) = mel.frames.at(src, m);
    }
    return win;
}

// ----- binary cache: 8-byte header (u32 T_mel, u32 bins), then f32 LE data

inline void write_mel_cache(const std::filesystem::path& path, const MelSpectrogram& mel) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    uint32_t hdr[2] = {static_cast<uint32_t>(mel.num_frames()), static_cast<uint32_t>(mel.num_bins())};
    f.write(reinterpret_cast<const char*>(hdr), 8);
    f.write(reinterpret_cast<const char*>(mel.frames.data()),
            static_cast<std::streamsize>(mel.frames.numel() * sizeof(float)));
    if (!f) throw IoError("short write to " + path.string());
}

inline MelSpectrogram read_mel_cache(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    uint32_t hdr[2];
    f.read(reinterpret_cast<char*>(hdr), 8);
    if (!f) throw IoError(path.string() + ": truncated mel cache header");
    MelSpectrogram mel;
    mel.frames = Tensor({static_cast<int>(hdr[0]), static_cast<int>(hdr[1])});
    f.read(reinterpret_cast<char*>(mel.frames.data()),
           static_cast<std::streamsize>(mel.frames.numel() * sizeof(float)));
    if (!f) throw IoError(path.string() + ": truncated mel cache payload");
    return mel;
}

}  // namespace segface
