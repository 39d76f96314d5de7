#pragma once

// Mask-derived landmark distances (whole-face and mouth-only scopes).
// Keypoints per region: centroid plus the four extremal points, with
// deterministic tie-breaking. A pretrained landmark detector can replace
// this behind the same scores, but the mask-derived variant is exactly
// testable.

#include <optional>

#include "segface/mask/mask.hpp"

namespace segface {

enum class LandmarkScope { Face, Mouth };

struct LandmarkSet {
    // 5 points per region, region order fixed: centroid, leftmost, rightmost,
    // topmost, bottommost. Absent regions carry no entry.
    struct Point {
        double y = 0.0, x = 0.0;
    };
    std::map<int32_t, std::array<Point, 5>> by_region;
};

inline const std::vector<int32_t>& landmark_region_ids(LandmarkScope scope) {
    static const std::vector<int32_t> face = {UPPER_LIP, LOWER_LIP, INNER_MOUTH, EYE, BROW, NOSE};
    static const std::vector<int32_t>& mouth = mouth_region_ids();
    return scope == LandmarkScope::Face ? face : mouth;
}

// Ties on extremal points resolve toward the smaller secondary coordinate.
inline LandmarkSet extract_landmarks(const SegmentationMap& map, LandmarkScope scope) {
    LandmarkSet out;
    for (int32_t region : landmark_region_ids(scope)) {
        double sy = 0.0, sx = 0.0;
        int64_t n = 0;
        LandmarkSet::Point l{0, 1e9}, r{0, -1e9}, t{1e9, 0}, b{-1e9, 0};
        for (int i = 0; i < map.height; ++i)
            for (int j = 0; j < map.width; ++j) {
                if (map.at(i, j) != region) continue;
                ++n;
                sy += i;
                sx += j;
                if (j < l.x || (j == l.x && i < l.y)) l = {static_cast<double>(i), static_cast<double>(j)};
                if (j > r.x || (j == r.x && i < r.y)) r = {static_cast<double>(i), static_cast<double>(j)};
                if (i < t.y || (i == t.y && j < t.x)) t = {static_cast<double>(i), static_cast<double>(j)};
                if (i > b.y || (i == b.y && j < b.x)) b = {static_cast<double>(i), static_cast<double>(j)};
            }
        if (n == 0) continue;
        out.by_region[region] = {LandmarkSet::Point{sy / static_cast<double>(n), sx / static_cast<double>(n)},
                                 l, r, t, b};
    }
    return out;
}

// Mean Euclidean distance over corresponding keypoints. Regions present in
// ground truth but missing from the prediction contribute `penalty` per
// keypoint. Throws when the ground truth has no scope region at all.
inline double landmark_distance(const SegmentationMap& pred, const SegmentationMap& gt,
                                LandmarkScope scope, double penalty) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw InvalidInput("landmark_distance: mask size mismatch");
    LandmarkSet lp = extract_landmarks(pred, scope);
    LandmarkSet lg = extract_landmarks(gt, scope);
    if (lg.by_region.empty())
        throw InvalidInput("landmark_distance: ground truth contains no scope region (metric undefined)");
    double total = 0.0;
    int64_t count = 0;
    for (const auto& [region, gpts] : lg.by_region) {
        auto it = lp.by_region.find(region);
        for (int k = 0; k < 5; ++k) {
            if (it == lp.by_region.end()) {
                total += penalty;
            } else {
                double dy = it->second[static_cast<size_t>(k)].y - gpts[static_cast<size_t>(k)].y;
                double dx = it->second[static_cast<size_t>(k)].x - gpts[static_cast<size_t>(k)].x;
                total += std::sqrt(dy * dy + dx * dx);
            }
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace segface
