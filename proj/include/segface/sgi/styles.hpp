#pragma once

// Per-region, per-layer style codes (the latent a mask-guided generator
// consumes), plus the editing primitives that act on them.

#include "segface/core/tensor.hpp"
#include "segface/mask/mask.hpp"

namespace segface {

// s in R^(C x L x D): one D-dim modulation vector per region per generator
// layer. L follows the layer count 2*log2(resolution) - 2.
struct StyleCodes {
    Tensor s;  // (C, L, D)
    int classes() const { return s.dim(0); }
    int layers() const { return s.dim(1); }
    int dim() const { return s.dim(2); }

    float& at(int c, int l, int d) {
        return s.v[(static_cast<size_t>(c) * s.dim(1) + l) * s.dim(2) + d];
    }
    float at(int c, int l, int d) const {
        return s.v[(static_cast<size_t>(c) * s.dim(1) + l) * s.dim(2) + d];
    }
};

inline int style_layer_count(int resolution) {
    int l = 0, r = resolution;
    while (r > 1) {
        r >>= 1;
        ++l;
    }
    return 2 * l - 2;
}

// Replace one region's row with the reference's; every other row is copied
// bit for bit.
inline StyleCodes swap_region_codes(const StyleCodes& src, const StyleCodes& ref, int region_id) {
    if (src.s.shape != ref.s.shape)
        throw InvalidInput("swap_region_codes: style grids differ in shape");
    if (region_id < 0 || region_id >= src.classes())
        throw InvalidInput("swap_region_codes: region id " + std::to_string(region_id) +
                           " outside [0," + std::to_string(src.classes()) + ")");
    StyleCodes out = src;
    const int64_t row = static_cast<int64_t>(src.layers()) * src.dim();
    std::copy_n(ref.s.v.begin() + region_id * row, row, out.s.v.begin() + region_id * row);
    return out;
}

// Hard composite: background-labeled pixels come from the background image,
// everything else is the generator output, bitwise.
inline Tensor swap_background(const Tensor& frame, const SegmentationMap& mask,
                              const Tensor& background) {
    if (frame.rank() != 3 || frame.dim(0) != 3) throw InvalidInput("swap_background: (3,H,W) frame expected");
    if (!frame.same_shape(background))
        throw InvalidInput("swap_background: background size " + background.shape_str() +
                           " does not match frame " + frame.shape_str());
    if (mask.height != frame.dim(1) || mask.width != frame.dim(2))
        throw InvalidInput("swap_background: mask size does not match frame");
    Tensor out = frame;
    const int64_t plane = static_cast<int64_t>(mask.height) * mask.width;
    for (int64_t p = 0; p < plane; ++p)
        if (mask.labels[static_cast<size_t>(p)] == BACKGROUND)
            for (int c = 0; c < 3; ++c) out.v[static_cast<size_t>(c * plane + p)] = background.v[static_cast<size_t>(c * plane + p)];
    return out;
}

// The spatial form of the codes at one generator layer: every pixel carries
// the D-vector of its (downsampled) label. Pixel values depend only on the
// label and s — the locality the editing contracts build on.
inline Tensor style_map(const StyleCodes& codes, const SegmentationMap& mask, int layer, int res) {
    if (layer < 0 || layer >= codes.layers()) throw InvalidInput("style_map: layer out of range");
    SegmentationMap labels = downsample(mask, res, res);
    Tensor out({codes.dim(), res, res});
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
            int32_t lab = labels.at(i, j);
            for (int d = 0; d < codes.dim(); ++d)
                out.v[(static_cast<size_t>(d) * res + i) * res + j] = codes.at(lab, layer, d);
        }
    return out;
}

// Uniform draw from the frames within `range` of the target, clipped to
// clip bounds; the target itself is included when the flag says so.
inline int prior_mask_sample_index(int clip_len, int target_idx, Rng& rng, int range = 15,
                                   bool include_target = true) {
    if (clip_len <= 1) throw InvalidInput("prior_mask_sample: clip too short");
    int lo = std::max(0, target_idx - range);
    int hi = std::min(clip_len - 1, target_idx + range);
    for (;;) {
        int idx = static_cast<int>(rng.uniform_int(lo, hi));
        if (include_target || idx != target_idx || lo == hi) return idx;
    }
}

}  // namespace segface
