#pragma once

// Procedural audio-visual corpus. Faces are 2-D region layouts (every
// canonical class present in every frame) with per-identity colors; the
// articulation parameter drives both the rendered mouth opening and the
// amplitude/pitch of the synthesized tone, so mel features carry
// recoverable lip information. Exact masks come for free.

#include "segface/audio/wav.hpp"
#include "segface/mask/mask_io.hpp"

namespace segface {

struct SyntheticClipSpec {
    uint64_t identity_seed = 0;
    uint64_t clip_seed = 0;
    int num_frames = 0;
    int resolution = 64;
    std::vector<float> articulation;  // per frame, in [0,1]
};

struct IdentityParams {
    std::array<std::array<float, 3>, 12> colors;
    int face_rx = 17, face_ry = 25;
    int fringe = 7;
    int mouth_half_width = 9;
    float bob_phase = 0.0f;
    float grad_strength = 0.03f;
};

namespace synth_detail {

inline float color_dist(const std::array<float, 3>& a, const std::array<float, 3>& b) {
    float d = 0.0f;
    for (int k = 0; k < 3; ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(d);
}

}  // namespace synth_detail

// Region colors are kept mutually separated (the parsing provider inverts
// by nearest color) and separated per-region across identities (identity
// codes must be distinguishable).
inline IdentityParams make_identity(uint64_t seed,
                                    const std::vector<IdentityParams>& existing = {}) {
    Rng rng(seed * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull);
    IdentityParams p;
    for (int c = 0; c < 12; ++c) {
        for (int attempt = 0; attempt < 4096; ++attempt) {
            std::array<float, 3> col = {rng.uniform(0.08f, 0.92f), rng.uniform(0.08f, 0.92f),
                                        rng.uniform(0.08f, 0.92f)};
            bool ok = true;
            for (int c2 = 0; c2 < c && ok; ++c2)
                if (synth_detail::color_dist(col, p.colors[static_cast<size_t>(c2)]) < 0.28f) ok = false;
            for (const auto& other : existing)
                if (ok && synth_detail::color_dist(col, other.colors[static_cast<size_t>(c)]) < 0.15f)
                    ok = false;
            if (ok) {
                p.colors[static_cast<size_t>(c)] = col;
                break;
            }
            if (attempt == 4095) p.colors[static_cast<size_t>(c)] = col;  // give up on separation
        }
    }
    p.face_rx = static_cast<int>(rng.uniform_int(16, 19));
    p.face_ry = static_cast<int>(rng.uniform_int(24, 26));
    p.fringe = static_cast<int>(rng.uniform_int(6, 9));
    p.mouth_half_width = static_cast<int>(rng.uniform_int(8, 10));
    p.bob_phase = rng.uniform(0.0f, 6.2831853f);
    p.grad_strength = rng.uniform(0.02f, 0.04f);
    return p;
}

// Smooth articulation track covering [0,1]: two incommensurate sinusoids
// plus a little seeded jitter, clamped.
inline std::vector<float> make_articulation(uint64_t clip_seed, int frames) {
    Rng rng(clip_seed ^ 0xA57Aull);
    float t1 = rng.uniform(9.0f, 14.0f), t2 = rng.uniform(23.0f, 31.0f);
    float p1 = rng.uniform(0.0f, 6.2831853f), p2 = rng.uniform(0.0f, 6.2831853f);
    std::vector<float> a(static_cast<size_t>(frames));
    for (int t = 0; t < frames; ++t) {
        float v = 0.5f + 0.34f * std::sin(6.2831853f * static_cast<float>(t) / t1 + p1) +
                  0.24f * std::sin(6.2831853f * static_cast<float>(t) / t2 + p2) +
                  0.03f * (rng.uniform() - 0.5f);
        a[static_cast<size_t>(t)] = std::clamp(v, 0.0f, 1.0f);
    }
    return a;
}

inline int mouth_opening_rows(float articulation) {
    return 1 + round_half_up(8.0 * static_cast<double>(articulation));
}

struct RenderedFrame {
    Tensor image;  // (3,H,W)
    SegmentationMap mask;
};

// Geometry note: fixed facial features are placed so that every region
// except the articulated mouth interior covers at least one stride-8
// anchor pixel, keeping regions visible to the coarsest encoder scale
// under the +-1 px head bob.
inline RenderedFrame render_frame(const IdentityParams& id, float articulation, int frame_idx,
                                  int res = 64) {
    if (res % 32 != 0) throw InvalidInput("render_frame: resolution must be a multiple of 32");
    const int s = res / 64;  // integer geometry scale
    const int dy = round_half_up(std::sin(6.2831853 * frame_idx / 40.0 + id.bob_phase));

    SegmentationMap mask(res, res);
    const int cx = 32 * s, cy = (30 + dy) * s;
    const int rx = id.face_rx * s, ry = id.face_ry * s;

    auto fill_rect = [&](int y0, int x0, int y1, int x1, int32_t lab) {
        for (int i = std::max(0, y0); i <= std::min(res - 1, y1); ++i)
            for (int j = std::max(0, x0); j <= std::min(res - 1, x1); ++j) mask.at(i, j) = lab;
    };
    auto fill_ellipse = [&](int ecy, int ecx, int ery, int erx, int32_t lab) {
        for (int i = std::max(0, ecy - ery); i <= std::min(res - 1, ecy + ery); ++i)
            for (int j = std::max(0, ecx - erx); j <= std::min(res - 1, ecx + erx); ++j) {
                double u = static_cast<double>(i - ecy) / ery;
                double v = static_cast<double>(j - ecx) / erx;
                if (u * u + v * v <= 1.0) mask.at(i, j) = lab;
            }
    };

    // z-order: background, neck, hair shell, face, ears, brows, eyes,
    // glasses, nose, mouth complex
    fill_rect(0, 0, res - 1, res - 1, BACKGROUND);
    fill_rect(cy + ry - 3 * s, cx - 7 * s, res - 1, cx + 7 * s, NECK);
    int hairline = cy - ry + id.fringe * s;
    for (int i = 0; i <= std::min(res - 1, hairline); ++i)
        for (int j = std::max(0, cx - rx - 3 * s); j <= std::min(res - 1, cx + rx + 3 * s); ++j) {
            double u = static_cast<double>(i - cy) / (ry + 3 * s);
            double v = static_cast<double>(j - cx) / (rx + 3 * s);
            if (u * u + v * v <= 1.0) mask.at(i, j) = HAIR;
        }
    // skin under the hairline
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
            double u = static_cast<double>(i - cy) / ry;
            double v = static_cast<double>(j - cx) / rx;
            if (u * u + v * v <= 1.0 && i > hairline) mask.at(i, j) = SKIN;
        }
    fill_ellipse(cy + 2 * s, cx - rx - 2 * s, 4 * s, 4 * s, EAR);
    fill_ellipse(cy + 2 * s, cx + rx + 2 * s, 4 * s, 4 * s, EAR);
    const int ey = (22 + dy) * s;
    fill_rect(ey - 7 * s, 18 * s, ey - 4 * s, 27 * s, BROW);
    fill_rect(ey - 7 * s, 37 * s, ey - 4 * s, 46 * s, BROW);
    fill_rect(ey, 20 * s, ey + 5 * s, 27 * s, EYE);
    fill_rect(ey, 37 * s, ey + 5 * s, 44 * s, EYE);
    // glasses: rims above/below the eyes, bridge, and temple arms that
    // reach toward the ears
    fill_rect(ey - 2 * s, 19 * s, ey - s, 28 * s, GLASSES);
    fill_rect(ey + 6 * s, 19 * s, ey + 7 * s, 28 * s, GLASSES);
    fill_rect(ey - 2 * s, 36 * s, ey - s, 45 * s, GLASSES);
    fill_rect(ey + 6 * s, 36 * s, ey + 7 * s, 45 * s, GLASSES);
    fill_rect(ey + s, 28 * s, ey + 3 * s, 36 * s, GLASSES);
    fill_rect((23 + dy) * s, 13 * s, (25 + dy) * s, 18 * s, GLASSES);
    fill_rect((23 + dy) * s, 46 * s, (25 + dy) * s, 51 * s, GLASSES);
    fill_ellipse((34 + dy) * s, cx, 4 * s, 3 * s, NOSE);

    const int mw = id.mouth_half_width * s;
    const int open_rows = mouth_opening_rows(articulation) * s;
    const int lip_top = (39 + dy) * s;
    fill_rect(lip_top, cx - mw, lip_top + 3 * s - 1, cx + mw, UPPER_LIP);
    fill_rect(lip_top + 3 * s, cx - mw + 2 * s, lip_top + 3 * s + open_rows - 1, cx + mw - 2 * s,
              INNER_MOUTH);
    fill_rect(lip_top + 3 * s + open_rows, cx - mw, lip_top + 3 * s + open_rows + 3 * s - 1,
              cx + mw, LOWER_LIP);

    RenderedFrame out;
    out.mask = mask;
    out.image = Tensor({3, res, res});
    const int64_t plane = static_cast<int64_t>(res) * res;
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
            int32_t lab = mask.at(i, j);
            float shade = 0.0f;  // gentle per-region vertical gradient
            if (lab == BACKGROUND || lab == HAIR || lab == SKIN)
                shade = id.grad_strength * (static_cast<float>(i) / static_cast<float>(res) - 0.5f);
            for (int k = 0; k < 3; ++k)
                out.image.v[static_cast<size_t>(k * plane + i * res + j)] = std::clamp(
                    id.colors[static_cast<size_t>(lab)][static_cast<size_t>(k)] + shade, 0.0f, 1.0f);
        }
    // every canonical class must be present in every frame
    for (int c = 0; c < 12; ++c)
        if (count_label(mask, c) == 0)
            throw std::logic_error("render_frame: class " + std::to_string(c) +
                                   " missing from a rendered mask");
    return out;
}

// Articulation-modulated harmonic tone with a noise floor, 640 samples per
// frame at 16 kHz / 25 fps.
inline std::vector<float> synthesize_audio(const std::vector<float>& articulation,
                                           uint64_t clip_seed) {
    Rng rng(clip_seed ^ 0x417Dull);
    const int frames = static_cast<int>(articulation.size());
    std::vector<float> wave(static_cast<size_t>(frames) * 640);
    double phase = 0.0;
    for (int t = 0; t < frames; ++t) {
        float a0 = articulation[static_cast<size_t>(t)];
        float a1 = articulation[static_cast<size_t>(std::min(t + 1, frames - 1))];
        for (int i = 0; i < 640; ++i) {
            float a = a0 + (a1 - a0) * static_cast<float>(i) / 640.0f;
            double freq = 120.0 + 400.0 * a;
            phase += 6.283185307179586 * freq / 16000.0;
            float amp = 0.12f + 0.8f * a;
            float v = amp * (0.7f * static_cast<float>(std::sin(phase)) +
                             0.3f * static_cast<float>(std::sin(2.0 * phase)));
            v += 0.008f * (rng.uniform() - 0.5f);
            wave[static_cast<size_t>(t) * 640 + i] = v;
        }
    }
    return wave;
}

}  // namespace segface
