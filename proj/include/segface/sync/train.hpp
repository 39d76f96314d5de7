#pragma once

// Pair sampling and the expert training loop.

#include <functional>

#include "segface/harness/config.hpp"
#include "segface/sync/expert.hpp"

namespace segface {

// Audio-visual clip view shared by sync and generator training.
struct ClipAV {
    std::vector<SegmentationMap> masks;  // one per video frame
    MelSpectrogram mel;
    int identity = 0;
};

struct SyncCorpus {
    std::vector<ClipAV> train;
    std::vector<ClipAV> test;
    int classes = 12;
};

// Draw one sample from `clips`. Positives align the speech window with the
// middle mask frame; negatives either shift the speech by at least 5 frames
// within the clip or take the window from another clip (50/50 when
// possible). Too-short clips yield nothing.
inline std::optional<SyncSample> sample_pair(const std::vector<ClipAV>& clips, size_t clip_idx,
                                             Rng& rng, int classes) {
    const ClipAV& clip = clips[clip_idx];
    const int len = static_cast<int>(clip.masks.size());
    if (len < kSyncWindowFrames + 10) return std::nullopt;

    const int half = kSyncWindowFrames / 2;
    int center = static_cast<int>(rng.uniform_int(half, len - half - 1));
    SyncSample s;
    s.mask_window = mask_window_tensor(clip.masks, center - half, classes);
    bool positive = rng.coin();
    s.label = positive ? 1 : 0;
    if (positive) {
        s.speech = window_for_frame(clip.mel, center).segment;
        return s;
    }
    bool cross_clip = clips.size() > 1 && rng.coin();
    if (cross_clip) {
        size_t other = clip_idx;
        while (other == clip_idx)
            other = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(clips.size()) - 1));
        const ClipAV& oc = clips[other];
        int olen = static_cast<int>(oc.masks.size());
        int frame = static_cast<int>(rng.uniform_int(half, std::max(half, olen - half - 1)));
        s.speech = window_for_frame(oc.mel, frame).segment;
        return s;
    }
    // Same-clip shift of at least 5 frames in either direction.
    int max_fwd = len - half - 1 - center;
    int max_back = center - half;
    std::vector<int> offsets;
    for (int off = 5; off <= max_fwd; ++off) offsets.push_back(off);
    for (int off = 5; off <= max_back; ++off) offsets.push_back(-off);
    if (offsets.empty()) {
        s.label = 1;  // cannot build a negative here; fall back to a positive
        s.speech = window_for_frame(clip.mel, center).segment;
        return s;
    }
    int off = offsets[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(offsets.size()) - 1))];
    s.speech = window_for_frame(clip.mel, center + off).segment;
    return s;
}

struct SyncTrainResult {
    float held_out_accuracy = 0.0f;
    float final_loss = 0.0f;
    int64_t steps = 0;
};

// Balanced accuracy at threshold p > 0.5 over freshly sampled pairs.
inline float evaluate_sync_accuracy(const SyncExpert& expert, const std::vector<ClipAV>& clips,
                                    int classes, int num_samples, Rng& rng) {
    int correct = 0, total = 0;
    while (total < num_samples) {
        size_t ci = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(clips.size()) - 1));
        auto s = sample_pair(clips, ci, rng, classes);
        if (!s) continue;
        SyncScore sc;
        {
            Graph g;
            Tensor mb({1, s->mask_window.dim(0), s->mask_window.dim(1), s->mask_window.dim(2)},
                      s->mask_window.v);
            Tensor sb({1, 1, kMelWindowFrames, 80}, s->speech.v);
            Node* m = expert.embed_masks(g, g.input(mb), true);
            Node* sp = expert.embed_speech(g, g.input(sb), true);
            Node* c = cosine_rows(g, sp, m, kSyncEpsNorm);
            sc.p = std::clamp(c->val[0], kSyncEpsProb, 1.0f);
        }
        int pred = sc.p > 0.5f ? 1 : 0;
        if (pred == s->label) ++correct;
        ++total;
    }
    return static_cast<float>(correct) / static_cast<float>(total);
}

using MetricsCallback =
    std::function<void(const std::string& event, int64_t step, double value)>;

inline SyncTrainResult train_expert(SyncExpert& expert, const SyncCorpus& corpus,
                                    const RunConfig& cfg, const MetricsCallback& log = {}) {
    if (corpus.train.empty()) throw InvalidInput("train_expert: empty corpus");
    Rng rng(static_cast<uint64_t>(cfg.get_int("seed")) ^ 0x53594e43ull);
    AdamConfig ac;
    ac.lr = static_cast<float>(cfg.get_float("sync.lr"));
    ac.beta1 = static_cast<float>(cfg.get_float("sync.beta1"));
    ac.beta2 = static_cast<float>(cfg.get_float("sync.beta2"));
    Adam opt(ac);

    const int batch = static_cast<int>(cfg.get_int("sync.batch"));
    const int64_t steps = cfg.get_int("sync.steps");
    const int64_t eval_every = cfg.get_int("sync.eval_every");
    const int eval_samples = static_cast<int>(cfg.get_int("sync.eval_samples"));
    const int classes = corpus.classes;

    SyncTrainResult result;
    for (int64_t step = 1; step <= steps; ++step) {
        std::vector<SyncSample> samples;
        while (static_cast<int>(samples.size()) < batch) {
            size_t ci = static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(corpus.train.size()) - 1));
            auto s = sample_pair(corpus.train, ci, rng, classes);
            if (s) samples.push_back(std::move(*s));
        }
        const auto& m0 = samples[0].mask_window;
        Tensor masks({batch, m0.dim(0), m0.dim(1), m0.dim(2)});
        Tensor speech({batch, 1, kMelWindowFrames, 80});
        std::vector<int> labels(static_cast<size_t>(batch));
        for (int b = 0; b < batch; ++b) {
            std::copy(samples[static_cast<size_t>(b)].mask_window.v.begin(),
                      samples[static_cast<size_t>(b)].mask_window.v.end(),
                      masks.v.begin() + static_cast<int64_t>(b) * m0.numel());
            std::copy(samples[static_cast<size_t>(b)].speech.v.begin(),
                      samples[static_cast<size_t>(b)].speech.v.end(),
                      speech.v.begin() + static_cast<int64_t>(b) * 16 * 80);
            labels[static_cast<size_t>(b)] = samples[static_cast<size_t>(b)].label;
        }

        expert.params().zero_grads();
        Graph g;
        Node* me = expert.embed_masks(g, g.input(masks));
        Node* se = expert.embed_speech(g, g.input(speech));
        Node* cos = cosine_rows(g, se, me, kSyncEpsNorm);
        Node* loss = sync_bce(g, cos, labels);
        if (!std::isfinite(loss->val[0]))
            throw Divergence("sync expert: non-finite loss at step " + std::to_string(step));
        g.backward(loss);
        opt.step(expert.params().all());
        result.final_loss = loss->val[0];

        if (log && (step % 50 == 0 || step == 1)) log("sync_loss", step, loss->val[0]);
        if (step % eval_every == 0 || step == steps) {
            Rng eval_rng(static_cast<uint64_t>(cfg.get_int("seed")) ^ 0xE7A1ull);
            const auto& clips = corpus.test.empty() ? corpus.train : corpus.test;
            result.held_out_accuracy =
                evaluate_sync_accuracy(expert, clips, classes, eval_samples, eval_rng);
            if (log) log("sync_accuracy", step, result.held_out_accuracy);
        }
        result.steps = step;
    }
    return result;
}

}  // namespace segface
