#pragma once

// Canonical region palette. A raw 19-class face parsing labeling is merged
// down to 12 canonical regions: left/right paired classes collapse, small
// accessories fold into their host region (earring -> ear, necklace ->
// neck, cloth -> background, hat -> hair).

#include <array>
#include <string>
#include <vector>

#include "segface/common.hpp"

namespace segface {

enum Region : int32_t {
    BACKGROUND = 0,
    SKIN = 1,
    BROW = 2,
    EYE = 3,
    GLASSES = 4,
    EAR = 5,
    NOSE = 6,
    INNER_MOUTH = 7,
    UPPER_LIP = 8,
    LOWER_LIP = 9,
    NECK = 10,
    HAIR = 11,
};

constexpr int kNumRawClasses = 19;

struct ClassPalette {
    std::vector<std::string> labels;    // index = canonical id
    std::vector<int32_t> merge_table;   // raw id in [0,19) -> canonical id
    int num_classes() const { return static_cast<int>(labels.size()); }

    int32_t merge(int32_t raw) const {
        if (raw < 0 || raw >= static_cast<int32_t>(merge_table.size()))
            throw InvalidInput("raw class id " + std::to_string(raw) + " outside [0," +
                               std::to_string(merge_table.size()) + ")");
        return merge_table[static_cast<size_t>(raw)];
    }

    // Fingerprint recorded in checkpoints so a model is never loaded against
    // a different labeling.
    uint64_t hash() const {
        uint64_t h = 1469598103934665603ull;
        for (const auto& s : labels) h = fnv1a(s, h);
        h = fnv1a(merge_table.data(), merge_table.size() * sizeof(int32_t), h);
        return h;
    }
};

inline ClassPalette canonical_palette() {
    ClassPalette p;
    p.labels = {"BACKGROUND", "SKIN", "BROW", "EYE", "GLASSES", "EAR",
                "NOSE", "INNER_MOUTH", "UPPER_LIP", "LOWER_LIP", "NECK", "HAIR"};
    // Raw order follows the usual face-parsing convention:
    // 0 background, 1 skin, 2 l_brow, 3 r_brow, 4 l_eye, 5 r_eye, 6 glasses,
    // 7 l_ear, 8 r_ear, 9 earring, 10 nose, 11 inner mouth, 12 upper lip,
    // 13 lower lip, 14 neck, 15 necklace, 16 cloth, 17 hair, 18 hat
    p.merge_table = {BACKGROUND, SKIN, BROW, BROW, EYE, EYE, GLASSES, EAR, EAR, EAR,
                     NOSE, INNER_MOUTH, UPPER_LIP, LOWER_LIP, NECK, NECK, BACKGROUND, HAIR, HAIR};
    return p;
}

inline const std::vector<int32_t>& mouth_region_ids() {
    static const std::vector<int32_t> ids = {INNER_MOUTH, UPPER_LIP, LOWER_LIP};
    return ids;
}

}  // namespace segface
