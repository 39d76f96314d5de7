// audio_features: mel frame-count formula, window alignment, providers.

#include <gtest/gtest.h>

#include "segface/audio/context.hpp"
#include "segface/audio/wav.hpp"

using namespace segface;

namespace {
std::vector<float> tone(int samples, float freq = 440.0f, float amp = 0.5f) {
    std::vector<float> w(static_cast<size_t>(samples));
    for (int i = 0; i < samples; ++i)
        w[static_cast<size_t>(i)] = amp * std::sin(6.2831853f * freq * static_cast<float>(i) / 16000.0f);
    return w;
}
}  // namespace

TEST(Mel, OneSecondGives77Frames) {
    MelSpectrogram mel = compute_mel(tone(16000), 16000);
    // floor((16000-800)/200)+1 = 77
    EXPECT_EQ(mel.num_frames(), 77);
    EXPECT_EQ(mel.num_bins(), 80);
    EXPECT_TRUE(mel.frames.all_finite());
}

TEST(Mel, ExactlyOneWindowGivesOneFrame) {
    MelSpectrogram mel = compute_mel(tone(800), 16000);
    EXPECT_EQ(mel.num_frames(), 1);
}

TEST(Mel, SilenceHitsTheLogFloor) {
    std::vector<float> silence(4000, 0.0f);
    MelSpectrogram mel = compute_mel(silence, 16000);
    const float floor_val = std::log(1e-5f);
    for (float v : mel.frames.v) EXPECT_FLOAT_EQ(v, floor_val);
}

TEST(Mel, RejectsWrongRateAndShortInput) {
    EXPECT_THROW(compute_mel(tone(16000), 22050), InvalidInput);
    EXPECT_THROW(compute_mel(tone(799), 16000), InvalidInput);
}

TEST(Mel, FrameCountFormulaOnRandomLengths) {
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        int n = static_cast<int>(rng.uniform_int(800, 60000));
        MelSpectrogram mel = compute_mel(tone(n, 200.0f), 16000);
        EXPECT_EQ(mel.num_frames(), (n - 800) / 200 + 1);
    }
}

TEST(Mel, CacheRoundTrip) {
    MelSpectrogram mel = compute_mel(tone(8000), 16000);
    auto path = std::filesystem::temp_directory_path() / "segface_mel_test.melbin";
    write_mel_cache(path, mel);
    MelSpectrogram back = read_mel_cache(path);
    EXPECT_EQ(back.frames.shape, mel.frames.shape);
    EXPECT_EQ(back.frames.v, mel.frames.v);
    std::filesystem::remove(path);
}

TEST(AudioWindow, StartsFollowRoundingRule) {
    MelSpectrogram mel = compute_mel(tone(4 * 16000), 16000);  // 317 frames
    AudioWindow w0 = window_for_frame(mel, 0);
    EXPECT_FALSE(w0.padded);
    for (int m = 0; m < 80; ++m) {
        EXPECT_EQ(w0.segment.at(0, m), mel.frames.at(0, m));
        EXPECT_EQ(w0.segment.at(15, m), mel.frames.at(15, m));
    }
    AudioWindow w10 = window_for_frame(mel, 10);  // start = round(32.0) = 32
    for (int m = 0; m < 80; ++m) EXPECT_EQ(w10.segment.at(0, m), mel.frames.at(32, m));
}

TEST(AudioWindow, TailIsZeroPaddedAndFlagged) {
    MelSpectrogram mel = compute_mel(tone(16000), 16000);  // 77 frames
    // frame 21: start = round(67.2) = 67 -> rows 67..76 real, 6 padded
    AudioWindow w = window_for_frame(mel, 21);
    EXPECT_TRUE(w.padded);
    for (int m = 0; m < 80; ++m) {
        EXPECT_EQ(w.segment.at(9, m), mel.frames.at(76, m));
        EXPECT_EQ(w.segment.at(10, m), 0.0f);
        EXPECT_EQ(w.segment.at(15, m), 0.0f);
    }
    EXPECT_THROW(window_for_frame(mel, 25), InvalidInput);  // start 80 >= 77
    EXPECT_THROW(window_for_frame(mel, -1), InvalidInput);
}

TEST(AudioWindow, ConsecutiveOverlapAndCenterDrift) {
    MelSpectrogram mel = compute_mel(tone(10 * 16000), 16000);
    int prev_start = 0;
    for (int t = 0; t < 250; ++t) {  // 10 s at 25 fps
        int start = round_half_up(t * kMelFramesPerVideoFrame);
        if (t > 0) {
            int overlap = 16 - (start - prev_start);
            EXPECT_GE(overlap, 12);
            EXPECT_LE(overlap, 13);
        }
        prev_start = start;
        // drift of the window center from the frame's nominal mel position
        double drift = std::fabs(static_cast<double>(start) - t * kMelFramesPerVideoFrame);
        EXPECT_LT(drift, 1.0);  // under one hop for every frame
    }
}

TEST(ContextProvider, ShapesDeterminismAndPadding) {
    DeskContextProvider provider({64, 32, 1, 123});
    std::vector<float> chunk = tone(48000, 300.0f);
    ContextFeatures a = provider.features(chunk);
    ContextFeatures b = provider.features(chunk);
    EXPECT_EQ(a.features.shape, (std::vector<int>{75, 64}));
    EXPECT_EQ(a.features.v, b.features.v);  // deterministic
    for (auto p : a.padded) EXPECT_EQ(p, 0);

    // 1 s chunk zero-padded to 3 s: 75 outputs, last 50 flagged padded
    ContextFeatures c = provider.features(tone(16000, 300.0f));
    EXPECT_EQ(c.features.dim(0), 75);
    int padded = 0;
    for (int t = 0; t < 75; ++t) {
        if (c.padded[static_cast<size_t>(t)]) ++padded;
        if (t < 25) EXPECT_EQ(c.padded[static_cast<size_t>(t)], 0);
    }
    EXPECT_EQ(padded, 50);
    EXPECT_THROW(provider.features(tone(48001)), InvalidInput);
}

TEST(ContextProvider, ZeroProviderIsShapeCompatible) {
    DeskContextProvider desk({64, 32, 1, 9});
    ZeroContextProvider zero(64);
    std::vector<float> chunk = tone(30000, 250.0f);
    ContextFeatures a = desk.features(chunk);
    ContextFeatures b = zero.features(chunk);
    EXPECT_EQ(a.features.shape, b.features.shape);
    EXPECT_EQ(a.padded, b.padded);
    for (float v : b.features.v) EXPECT_EQ(v, 0.0f);
}

TEST(Wav, RoundTrip) {
    auto path = std::filesystem::temp_directory_path() / "segface_wav_test.wav";
    std::vector<float> w = tone(5000, 220.0f, 0.3f);
    write_wav(path, w, 16000);
    WavData back = read_wav(path);
    EXPECT_EQ(back.sample_rate, 16000);
    ASSERT_EQ(back.samples.size(), w.size());
    for (size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(back.samples[i], w[i], 1.0f / 32768.0f + 1e-5f);
    std::filesystem::remove(path);
}
