#pragma once

// Segmentation-domain lip-sync expert: two strided-conv towers embed a
// window of T_v lower-half one-hot masks and a 0.2 s mel slice into a
// shared 512-d space; cosine similarity gives the sync probability and a
// clamped BCE gives the loss. Used three ways: trained standalone, frozen
// as a loss inside generator training, and as the Sync evaluation metric.

#include <optional>

#include "segface/audio/mel.hpp"
#include "segface/core/nn.hpp"
#include "segface/mask/mask.hpp"

namespace segface {

constexpr int kSyncWindowFrames = 5;   // T_v
constexpr int kSyncEmbedDim = 512;
constexpr float kSyncEpsNorm = 1e-8f;  // division guard in the cosine
constexpr float kSyncEpsProb = 1e-7f;  // probability floor, bounds -log terms

struct SyncScore {
    float p = 0.0f;  // in [eps_p, 1]
};

// One training example: T_v consecutive lower-half masks concatenated on
// the channel axis, the aligned (or deliberately misaligned) speech
// window, and the sync/non-sync label.
struct SyncSample {
    Tensor mask_window;  // (T_v*C, H/2, W)
    Tensor speech;       // (16, 80)
    int label = 1;
};

inline float cosine_guarded(const std::vector<float>& s, const std::vector<float>& m,
                            float eps = kSyncEpsNorm) {
    double dot = 0.0, ns = 0.0, nm = 0.0;
    for (size_t i = 0; i < s.size(); ++i) {
        dot += static_cast<double>(s[i]) * m[i];
        ns += static_cast<double>(s[i]) * s[i];
        nm += static_cast<double>(m[i]) * m[i];
    }
    float denom = std::max(static_cast<float>(std::sqrt(ns) * std::sqrt(nm)), eps);
    return static_cast<float>(dot) / denom;
}

inline SyncScore sync_probability(const std::vector<float>& speech_embed,
                                  const std::vector<float>& mask_embed,
                                  float eps = kSyncEpsNorm, float eps_p = kSyncEpsProb) {
    if (speech_embed.size() != mask_embed.size())
        throw InvalidInput("sync_probability: embedding dimension mismatch (" +
                           std::to_string(speech_embed.size()) + " vs " +
                           std::to_string(mask_embed.size()) + ")");
    float c = cosine_guarded(speech_embed, mask_embed, eps);
    return {std::clamp(c, eps_p, 1.0f)};
}

// Full BCE over a batch of scores: positives contribute -log p, negatives
// -log(1-p), each term floored at eps_p so the loss stays finite.
inline float sync_loss(const std::vector<SyncScore>& scores, const std::vector<int>& labels,
                       float eps_p = kSyncEpsProb) {
    if (scores.empty()) throw InvalidInput("sync_loss: empty batch");
    if (scores.size() != labels.size()) throw InvalidInput("sync_loss: label count mismatch");
    double total = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        float p = scores[i].p;
        float term = labels[i] ? std::max(p, eps_p) : std::max(1.0f - p, eps_p);
        total += -std::log(static_cast<double>(term));
    }
    return static_cast<float>(total / static_cast<double>(scores.size()));
}

// Differentiable path: cosine node (N,) -> scalar BCE with the same
// clamping as the scalar version; gradient is zero in clamped zones.
inline Node* sync_bce(Graph& g, Node* cos, const std::vector<int>& labels,
                      float eps_p = kSyncEpsProb) {
    int n = cos->val.dim(0);
    if (n == 0) throw InvalidInput("sync_bce: empty batch");
    if (static_cast<size_t>(n) != labels.size()) throw InvalidInput("sync_bce: label count mismatch");
    Node* out = g.alloc();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        float p = std::clamp(cos->val[i], eps_p, 1.0f);
        float term = labels[static_cast<size_t>(i)] ? p : std::max(1.0f - p, eps_p);
        total += -std::log(static_cast<double>(term));
    }
    out->val = Tensor::scalar(static_cast<float>(total / n));
    out->need_grad = cos->need_grad;
    if (out->need_grad) {
        auto labs = std::make_shared<std::vector<int>>(labels);
        out->back = [out, cos, labs, n, eps_p] {
            float gv = out->grad[0] / static_cast<float>(n);
            for (int i = 0; i < n; ++i) {
                float c = cos->val[i];
                float d = 0.0f;
                if ((*labs)[static_cast<size_t>(i)]) {
                    if (c > eps_p && c < 1.0f) d = -1.0f / c;
                } else {
                    if (1.0f - c > eps_p && c > -1.0f) d = 1.0f / (1.0f - c);
                }
                cos->g()[i] += gv * d;
            }
        };
    }
    return out;
}

struct SyncExpertConfig {
    int classes = 12;
    int height = 64;  // full-frame height; the mask tower sees the lower half
    int width = 64;
    int base_width = 48;
    uint64_t seed = 7;
};

class SyncExpert {
public:
    explicit SyncExpert(SyncExpertConfig cfg = {}) : cfg_(cfg) {
        if (cfg.height % 2 != 0) throw InvalidInput("sync expert: even frame height required");
        Rng rng(cfg.seed);
        const int w = cfg.base_width;
        const int in_ch = kSyncWindowFrames * cfg.classes;
        mask_convs_ = {Conv2d(params_, "mask.c0", rng, in_ch, w, 3, 2),
                       Conv2d(params_, "mask.c1", rng, w, 2 * w, 3, 2),
                       Conv2d(params_, "mask.c2", rng, 2 * w, 3 * w, 3, 2),
                       Conv2d(params_, "mask.c3", rng, 3 * w, 4 * w, 3, 2)};
        mask_norms_ = {InstanceNorm(params_, "mask.n0", w), InstanceNorm(params_, "mask.n1", 2 * w),
                       InstanceNorm(params_, "mask.n2", 3 * w), InstanceNorm(params_, "mask.n3", 4 * w)};
        mask_proj_ = Linear(params_, "mask.proj", rng, 4 * w, kSyncEmbedDim, 1.0f);
        speech_convs_ = {Conv2d(params_, "speech.c0", rng, 1, w, 3, 2),
                         Conv2d(params_, "speech.c1", rng, w, 2 * w, 3, 2),
                         Conv2d(params_, "speech.c2", rng, 2 * w, 3 * w, 3, 2),
                         Conv2d(params_, "speech.c3", rng, 3 * w, 4 * w, 3, 2)};
        speech_norms_ = {InstanceNorm(params_, "speech.n0", w), InstanceNorm(params_, "speech.n1", 2 * w),
                         InstanceNorm(params_, "speech.n2", 3 * w), InstanceNorm(params_, "speech.n3", 4 * w)};
        speech_proj_ = Linear(params_, "speech.proj", rng, 4 * w, kSyncEmbedDim, 1.0f);
    }

    const SyncExpertConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }

    // x: (N, T_v*C, H/2, W). The channel count is checked loudly: a model
    // built for a different C must never silently consume the window.
    Node* embed_masks(Graph& g, Node* x, bool frozen = false) const {
        const int expect = kSyncWindowFrames * cfg_.classes;
        if (x->val.dim(1) != expect)
            throw InvalidInput("sync expert: mask window has " + std::to_string(x->val.dim(1)) +
                               " channels, expert was built for " + std::to_string(expect));
        if (x->val.dim(2) != cfg_.height / 2 || x->val.dim(3) != cfg_.width)
            throw InvalidInput("sync expert: mask window spatial size " +
                               x->val.shape_str() + " does not match expert resolution");
        return tower(g, x, mask_convs_, mask_norms_, mask_proj_, frozen);
    }

    // x: (N, 1, 16, 80)
    Node* embed_speech(Graph& g, Node* x, bool frozen = false) const {
        if (x->val.dim(1) != 1 || x->val.dim(2) != kMelWindowFrames || x->val.dim(3) != 80)
            throw InvalidInput("sync expert: speech window must be (N,1,16,80), got " +
                               x->val.shape_str());
        return tower(g, x, speech_convs_, speech_norms_, speech_proj_, frozen);
    }

    // Inference-path probability for one sample.
    SyncScore score(const Tensor& mask_window, const Tensor& speech) const {
        Graph g;
        Node* m = embed_masks(g, g.input(batch1(mask_window)), true);
        Node* s = embed_speech(g, g.input(batch1_speech(speech)), true);
        Node* c = cosine_rows(g, s, m, kSyncEpsNorm);
        return {std::clamp(c->val[0], kSyncEpsProb, 1.0f)};
    }

private:
    static Tensor batch1(const Tensor& t) {
        return Tensor({1, t.dim(0), t.dim(1), t.dim(2)}, t.v);
    }
    static Tensor batch1_speech(const Tensor& t) {
        return Tensor({1, 1, t.dim(0), t.dim(1)}, t.v);
    }

    Node* tower(Graph& g, Node* x, const std::vector<Conv2d>& convs,
                const std::vector<InstanceNorm>& norms, const Linear& proj, bool frozen) const {
        for (size_t i = 0; i < convs.size(); ++i) {
            x = frozen ? convs[i].frozen(g, x) : convs[i](g, x);
            x = frozen ? norms[i].frozen(g, x) : norms[i](g, x);
            x = leaky_relu(g, x);
        }
        Node* pooled = global_avg_pool(g, x);
        return frozen ? proj.frozen(g, pooled) : proj(g, pooled);
    }

    SyncExpertConfig cfg_;
    mutable ParamSet params_;
    std::vector<Conv2d> mask_convs_, speech_convs_;
    std::vector<InstanceNorm> mask_norms_, speech_norms_;
    Linear mask_proj_, speech_proj_;
};

// Lower-half one-hot window (T_v*C, H/2, W) from consecutive maps.
inline Tensor mask_window_tensor(const std::vector<SegmentationMap>& maps, int start, int classes) {
    if (start < 0 || start + kSyncWindowFrames > static_cast<int>(maps.size()))
        throw InvalidInput("mask_window_tensor: window out of range");
    const int h = maps[static_cast<size_t>(start)].height;
    const int w = maps[static_cast<size_t>(start)].width;
    const int half = h / 2;
    Tensor out({kSyncWindowFrames * classes, half, w});
    for (int f = 0; f < kSyncWindowFrames; ++f) {
        const auto& m = maps[static_cast<size_t>(start + f)];
        for (int i = 0; i < half; ++i)
            for (int j = 0; j < w; ++j) {
                int32_t lab = m.at(half + i, j);
                if (lab < 0 || lab >= classes)
                    throw InvalidInput("mask_window_tensor: label out of range");
                out.v[((static_cast<size_t>(f) * classes + lab) * half + i) * w + j] = 1.0f;
            }
    }
    return out;
}

}  // namespace segface
