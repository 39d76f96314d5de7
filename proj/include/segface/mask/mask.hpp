#pragma once

// Segmentation maps, one-hot codecs and the mask-level operations the rest
// of the pipeline builds on. All functions here are pure.

#include <algorithm>
#include <optional>

#include "segface/core/tensor.hpp"
#include "segface/mask/palette.hpp"

namespace segface {

struct SegmentationMap {
    int height = 0, width = 0;
    std::vector<int32_t> labels;  // row-major H*W

    SegmentationMap() = default;
    SegmentationMap(int h, int w) : height(h), width(w) {
        if (h <= 0 || w <= 0) throw InvalidInput("segmentation map dimensions must be positive");
        labels.assign(static_cast<size_t>(h) * w, 0);
    }
    int32_t& at(int i, int j) { return labels[static_cast<size_t>(i) * width + j]; }
    int32_t at(int i, int j) const { return labels[static_cast<size_t>(i) * width + j]; }
    int64_t numel() const { return static_cast<int64_t>(labels.size()); }

    bool operator==(const SegmentationMap& o) const {
        return height == o.height && width == o.width && labels == o.labels;
    }
};

// Binary C×H×W encoding. Exactly one hot channel per pixel, except occluded
// pixels of a pose source where all channels are zero.
struct OneHotMask {
    int channels = 0, height = 0, width = 0;
    std::vector<float> data;

    OneHotMask() = default;
    OneHotMask(int c, int h, int w) : channels(c), height(h), width(w) {
        data.assign(static_cast<size_t>(c) * h * w, 0.0f);
    }
    float& at(int c, int i, int j) {
        return data[(static_cast<size_t>(c) * height + i) * width + j];
    }
    float at(int c, int i, int j) const {
        return data[(static_cast<size_t>(c) * height + i) * width + j];
    }
    Tensor tensor() const { return Tensor({channels, height, width}, data); }
};

struct RegionWeights {
    std::vector<float> w;  // length C, positive
};

// Pose source (lower half occluded) plus full identity reference.
struct MaskPair {
    OneHotMask pose_source;
    OneHotMask identity_reference;
};

enum class EditKind { RegionTextureSwap, Blink, BackgroundSwap };

// Declarative local-edit instruction. `stencil` is used by blink edits;
// `reference_frame` by region texture swaps.
struct EditSpec {
    EditKind kind = EditKind::Blink;
    int32_t region_id = 0;
    int reference_frame = 0;
    struct Rect {
        int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open
        bool empty() const { return y0 >= y1 || x0 >= x1; }
    } stencil;
};

inline SegmentationMap merge_classes(const SegmentationMap& raw, const ClassPalette& palette) {
    SegmentationMap out(raw.height, raw.width);
    for (size_t i = 0; i < raw.labels.size(); ++i)
        out.labels[i] = palette.merge(raw.labels[i]);
    return out;
}

inline OneHotMask one_hot(const SegmentationMap& map, int num_classes) {
    OneHotMask out(num_classes, map.height, map.width);
    for (int i = 0; i < map.height; ++i)
        for (int j = 0; j < map.width; ++j) {
            int32_t lab = map.at(i, j);
            if (lab < 0 || lab >= num_classes)
                throw InvalidInput("label " + std::to_string(lab) + " >= class count " +
                                   std::to_string(num_classes));
            out.at(lab, i, j) = 1.0f;
        }
    return out;
}

// Per-pixel argmax; inverse of one_hot for valid masks, and the decoder for
// soft channel scores. Ties resolve to the lowest channel.
inline SegmentationMap decode_argmax(const OneHotMask& mask) {
    SegmentationMap out(mask.height, mask.width);
    for (int i = 0; i < mask.height; ++i)
        for (int j = 0; j < mask.width; ++j) {
            int best = 0;
            float bv = mask.at(0, i, j);
            for (int c = 1; c < mask.channels; ++c) {
                float v = mask.at(c, i, j);
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            out.at(i, j) = best;
        }
    return out;
}

inline SegmentationMap decode_argmax(const Tensor& chw) {
    OneHotMask m(chw.dim(0), chw.dim(1), chw.dim(2));
    m.data = chw.v;
    return decode_argmax(m);
}

// Inverse-area class weights over a corpus: w_c ∝ 1/(p_c + eps), normalized
// to mean one, then clipped to [0.1, 10].
inline RegionWeights compute_class_weights(const std::vector<SegmentationMap>& corpus,
                                           int num_classes, float eps_area = 1e-6f) {
    if (corpus.empty()) throw InvalidInput("compute_class_weights: empty corpus");
    std::vector<double> counts(static_cast<size_t>(num_classes), 0.0);
    double total = 0.0;
    for (const auto& map : corpus) {
        for (int32_t lab : map.labels) {
            if (lab < 0 || lab >= num_classes)
                throw InvalidInput("compute_class_weights: label out of range");
            counts[static_cast<size_t>(lab)] += 1.0;
        }
        total += static_cast<double>(map.numel());
    }
    RegionWeights rw;
    rw.w.resize(static_cast<size_t>(num_classes));
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        double frac = counts[static_cast<size_t>(c)] / total;
        rw.w[static_cast<size_t>(c)] = static_cast<float>(1.0 / (frac + eps_area));
        sum += rw.w[static_cast<size_t>(c)];
    }
    float mean = static_cast<float>(sum / num_classes);
    for (auto& x : rw.w) x = std::clamp(x / mean, 0.1f, 10.0f);
    return rw;
}

inline OneHotMask occlude_lower_half(const OneHotMask& mask) {
    if (mask.height < 2) throw InvalidInput("occlude_lower_half: H >= 2 required");
    OneHotMask out = mask;
    int start = mask.height / 2;
    for (int c = 0; c < mask.channels; ++c)
        for (int i = start; i < mask.height; ++i)
            for (int j = 0; j < mask.width; ++j) out.at(c, i, j) = 0.0f;
    return out;
}

// Nearest-neighbor, top-left anchored. Target must divide the source.
inline SegmentationMap downsample(const SegmentationMap& map, int target_h, int target_w) {
    if (target_h <= 0 || target_w <= 0 || map.height % target_h != 0 || map.width % target_w != 0)
        throw InvalidInput("downsample: target " + std::to_string(target_h) + "x" +
                           std::to_string(target_w) + " does not divide source");
    int sh = map.height / target_h, sw = map.width / target_w;
    SegmentationMap out(target_h, target_w);
    for (int i = 0; i < target_h; ++i)
        for (int j = 0; j < target_w; ++j) out.at(i, j) = map.at(i * sh, j * sw);
    return out;
}

// Validate an edit against a map. Blink stencils must stay inside the face
// bounding region (bounding box of non-background pixels).
inline void validate_edit(const SegmentationMap& map, const EditSpec& spec, int num_classes) {
    if (spec.region_id < 0 || spec.region_id >= num_classes)
        throw InvalidInput("edit references region id " + std::to_string(spec.region_id) +
                           " outside palette");
    if (spec.kind == EditKind::Blink && !spec.stencil.empty()) {
        int y0 = map.height, x0 = map.width, y1 = -1, x1 = -1;
        for (int i = 0; i < map.height; ++i)
            for (int j = 0; j < map.width; ++j)
                if (map.at(i, j) != BACKGROUND) {
                    y0 = std::min(y0, i);
                    x0 = std::min(x0, j);
                    y1 = std::max(y1, i);
                    x1 = std::max(x1, j);
                }
        if (y1 < 0) return;  // no face pixels: blink is a no-op anyway
        if (spec.stencil.y0 < y0 || spec.stencil.x0 < x0 || spec.stencil.y1 > y1 + 1 ||
            spec.stencil.x1 > x1 + 1)
            throw InvalidInput("blink stencil extends outside the face bounding region");
    }
}

// Apply a mask-level edit. Blink rewrites EYE pixels under the stencil to
// SKIN. Texture and background swaps act on style codes / composited output
// downstream, so at mask level they are identities.
inline SegmentationMap apply_edit(const SegmentationMap& map, const EditSpec& spec,
                                  int num_classes) {
    validate_edit(map, spec, num_classes);
    switch (spec.kind) {
        case EditKind::Blink: {
            SegmentationMap out = map;
            const auto& r = spec.stencil;
            for (int i = std::max(0, r.y0); i < std::min(map.height, r.y1); ++i)
                for (int j = std::max(0, r.x0); j < std::min(map.width, r.x1); ++j)
                    if (out.at(i, j) == EYE) out.at(i, j) = SKIN;
            return out;
        }
        case EditKind::RegionTextureSwap:
        case EditKind::BackgroundSwap:
            return map;
    }
    throw InvalidInput("apply_edit: unknown edit kind");
}

inline int64_t count_label(const SegmentationMap& map, int32_t label) {
    return std::count(map.labels.begin(), map.labels.end(), label);
}

}  // namespace segface
