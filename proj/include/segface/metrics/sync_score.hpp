#pragma once

// Sync confidence of a mask sequence against audio: mean expert P_sync
// over all aligned T_v windows.

#include "segface/sync/expert.hpp"

namespace segface {

inline double sync_confidence(const std::vector<SegmentationMap>& masks, const MelSpectrogram& mel,
                              const SyncExpert& expert) {
    const int len = static_cast<int>(masks.size());
    if (len < kSyncWindowFrames)
        throw InvalidInput("sync_confidence: sequence shorter than " +
                           std::to_string(kSyncWindowFrames) + " frames");
    const int half = kSyncWindowFrames / 2;
    const int classes = expert.config().classes;
    double total = 0.0;
    int64_t count = 0;
    for (int center = half; center + half < len; ++center) {
        Tensor window = mask_window_tensor(masks, center - half, classes);
        Tensor speech = window_for_frame(mel, center).segment;
        total += expert.score(window, speech).p;
        ++count;
    }
    return total / static_cast<double>(count);
}

}  // namespace segface
