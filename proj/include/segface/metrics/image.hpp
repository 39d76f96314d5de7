#pragma once

// Frame-level quality metrics: PSNR (capped at 100 dB for identical
// images), windowed SSIM, segmentation IoU, and temporal-consistency
// statistics. All pure and deterministic.

#include "segface/core/tensor.hpp"
#include "segface/mask/mask.hpp"

namespace segface {

constexpr float kPsnrCap = 100.0f;

inline double psnr(const Tensor& a, const Tensor& b, double max_val = 1.0) {
    if (!a.same_shape(b)) throw InvalidInput("psnr: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(static_cast<double>(kPsnrCap), 10.0 * std::log10(max_val * max_val / mse));
}

namespace detail {
// Fixed luma weights; used whenever a metric needs grayscale.
inline Tensor to_gray(const Tensor& img) {
    if (img.rank() == 2) return img;
    if (img.rank() == 3 && img.dim(0) == 1) return Tensor({img.dim(1), img.dim(2)}, img.v);
    if (img.rank() != 3 || img.dim(0) != 3) throw InvalidInput("to_gray: (3,H,W) or (H,W) expected");
    int h = img.dim(1), w = img.dim(2);
    Tensor g({h, w});
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int64_t i = 0; i < plane; ++i)
        g[i] = 0.299f * img[i] + 0.587f * img[plane + i] + 0.114f * img[2 * plane + i];
    return g;
}
}  // namespace detail

struct SsimConfig {
    int window = 8;
    double k1 = 0.01;
    double k2 = 0.03;
    double max_val = 1.0;
};

// Mean of local SSIM over all (stride-1) windows, population variance
// within each window.
inline double ssim(const Tensor& a, const Tensor& b, SsimConfig cfg = {}) {
    if (!a.same_shape(b)) throw InvalidInput("ssim: shape mismatch");
    Tensor ga = detail::to_gray(a), gb = detail::to_gray(b);
    int h = ga.dim(0), w = ga.dim(1);
    if (h < cfg.window || w < cfg.window)
        throw InvalidInput("ssim: image smaller than the " + std::to_string(cfg.window) +
                           "-pixel window");
    const double c1 = (cfg.k1 * cfg.max_val) * (cfg.k1 * cfg.max_val);
    const double c2 = (cfg.k2 * cfg.max_val) * (cfg.k2 * cfg.max_val);
    const int n = cfg.window * cfg.window;
    double total = 0.0;
    int64_t count = 0;
    for (int i = 0; i + cfg.window <= h; ++i)
        for (int j = 0; j + cfg.window <= w; ++j) {
            double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
            for (int u = 0; u < cfg.window; ++u)
                for (int v = 0; v < cfg.window; ++v) {
                    double x = ga.at(i + u, j + v), y = gb.at(i + u, j + v);
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                }
            double mx = sx / n, my = sy / n;
            double vx = sxx / n - mx * mx;
            double vy = syy / n - my * my;
            double cov = sxy / n - mx * my;
            total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    return total / static_cast<double>(count);
}

// Per-class IoU aggregated over a sequence; classes absent from both
// prediction and ground truth are skipped.
inline double mean_iou(const std::vector<SegmentationMap>& pred,
                       const std::vector<SegmentationMap>& gt,
                       const std::vector<int32_t>& class_ids) {
    if (pred.size() != gt.size() || pred.empty())
        throw InvalidInput("mean_iou: sequence length mismatch");
    std::vector<int64_t> inter(class_ids.size(), 0), uni(class_ids.size(), 0);
    for (size_t f = 0; f < pred.size(); ++f) {
        if (pred[f].height != gt[f].height || pred[f].width != gt[f].width)
            throw InvalidInput("mean_iou: frame size mismatch");
        for (size_t i = 0; i < pred[f].labels.size(); ++i)
            for (size_t c = 0; c < class_ids.size(); ++c) {
                bool p = pred[f].labels[i] == class_ids[c];
                bool t = gt[f].labels[i] == class_ids[c];
                if (p && t) ++inter[c];
                if (p || t) ++uni[c];
            }
    }
    double sum = 0.0;
    int used = 0;
    for (size_t c = 0; c < class_ids.size(); ++c) {
        if (uni[c] == 0) continue;
        sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
        ++used;
    }
    if (used == 0) throw InvalidInput("mean_iou: no class present in either sequence");
    return sum / used;
}

inline double mouth_iou(const std::vector<SegmentationMap>& pred,
                        const std::vector<SegmentationMap>& gt) {
    return mean_iou(pred, gt, mouth_region_ids());
}

// Fraction of upper-half pixels agreeing between two maps.
inline double upper_half_agreement(const std::vector<SegmentationMap>& pred,
                                   const std::vector<SegmentationMap>& gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw InvalidInput("upper_half_agreement: sequence length mismatch");
    int64_t agree = 0, total = 0;
    for (size_t f = 0; f < pred.size(); ++f) {
        int half = pred[f].height / 2;
        for (int i = 0; i < half; ++i)
            for (int j = 0; j < pred[f].width; ++j) {
                if (pred[f].at(i, j) == gt[f].at(i, j)) ++agree;
                ++total;
            }
    }
    return static_cast<double>(agree) / static_cast<double>(total);
}

struct TemporalStats {
    double mean_frame_diff = 0.0;  // mean over consecutive pairs of mean |delta|
    double max_frame_diff = 0.0;
    double mouth_area_smoothness = 0.0;  // mean |delta mouth area| in pixels (masks required)
    bool has_mouth_stat = false;
};

inline TemporalStats temporal_consistency(const std::vector<Tensor>& frames,
                                          const std::vector<SegmentationMap>* masks = nullptr) {
    if (frames.size() < 2)
        throw InvalidInput("temporal_consistency: at least two frames required");
    TemporalStats st;
    for (size_t f = 1; f < frames.size(); ++f) {
        if (!frames[f].same_shape(frames[f - 1]))
            throw InvalidInput("temporal_consistency: frame shape mismatch");
        double d = 0.0;
        for (int64_t i = 0; i < frames[f].numel(); ++i)
            d += std::fabs(static_cast<double>(frames[f][i]) - frames[f - 1][i]);
        d /= static_cast<double>(frames[f].numel());
        st.mean_frame_diff += d;
        st.max_frame_diff = std::max(st.max_frame_diff, d);
    }
    st.mean_frame_diff /= static_cast<double>(frames.size() - 1);
    if (masks && masks->size() == frames.size()) {
        double sum = 0.0;
        for (size_t f = 1; f < masks->size(); ++f) {
            int64_t a = 0, b = 0;
            for (int32_t id : mouth_region_ids()) {
                a += count_label((*masks)[f], id);
                b += count_label((*masks)[f - 1], id);
            }
            sum += std::fabs(static_cast<double>(a - b));
        }
        st.mouth_area_smoothness = sum / static_cast<double>(masks->size() - 1);
        st.has_mouth_stat = true;
    }
    return st;
}

}  // namespace segface
