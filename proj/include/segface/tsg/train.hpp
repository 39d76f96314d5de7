#pragma once

// Two-phase TSG training (reconstruction first, then the frozen sync
// expert joins) and mask-sequence generation.

#include <map>

#include "segface/harness/config.hpp"
#include "segface/sync/train.hpp"
#include "segface/tsg/unet.hpp"

namespace segface {

struct FrameRef {
    const ClipAV* clip = nullptr;
    int frame = 0;
};

// Fused speech embedding (local 0.2 s tower ++ contextual provider row)
// for a batch of frames. Provider passes are shared per (clip, chunk).
inline Node* speech_embedding_batch(Graph& g, const TSGModel& model,
                                    const std::vector<FrameRef>& refs, bool frozen = false) {
    const int n = static_cast<int>(refs.size());
    Tensor local({n, 1, kMelWindowFrames, 80});
    for (int i = 0; i < n; ++i) {
        AudioWindow w = window_for_frame(refs[static_cast<size_t>(i)].clip->mel,
                                         refs[static_cast<size_t>(i)].frame);
        std::copy(w.segment.v.begin(), w.segment.v.end(),
                  local.v.begin() + static_cast<int64_t>(i) * kMelWindowFrames * 80);
    }
    Node* loc = model.embed_local(g, g.input(local), frozen);

    std::map<std::pair<const ClipAV*, int>, Node*> chunk_cache;
    std::vector<Node*> rows;
    rows.reserve(static_cast<size_t>(n));
    for (const auto& r : refs) {
        int chunk = r.frame / kFramesPerChunk;
        auto key = std::make_pair(r.clip, chunk);
        auto it = chunk_cache.find(key);
        if (it == chunk_cache.end()) {
            Node* feats = model.provider().forward_mel(g, chunk_mel_block(r.clip->mel, chunk), frozen);
            it = chunk_cache.emplace(key, feats).first;
        }
        rows.push_back(select_rows(g, it->second, {r.frame % kFramesPerChunk}));
    }
    Node* ctx = concat_rows(g, rows);
    return concat_cols(g, {loc, ctx});
}

struct TSGTrainResult {
    TSGLossReport last_report;
    int64_t steps = 0;
};

namespace detail {

struct TSGBatch {
    Tensor masks;        // (N, 2C, H, W)
    IntGrid targets;     // (N, H, W)
    std::vector<FrameRef> refs;
};

inline TSGBatch build_tsg_batch(const std::vector<ClipAV>& clips,
                                const std::vector<std::pair<size_t, int>>& picks, int classes,
                                Rng& rng) {
    TSGBatch batch;
    const int n = static_cast<int>(picks.size());
    const auto& first = clips[picks[0].first].masks[0];
    batch.masks = Tensor({n, 2 * classes, first.height, first.width});
    batch.targets = IntGrid({n, first.height, first.width});
    batch.refs.resize(static_cast<size_t>(n));
    const int64_t plane = static_cast<int64_t>(first.height) * first.width;
    for (int i = 0; i < n; ++i) {
        const ClipAV& clip = clips[picks[static_cast<size_t>(i)].first];
        int t = picks[static_cast<size_t>(i)].second;
        int len = static_cast<int>(clip.masks.size());
        int ref = t;
        while (ref == t && len > 1) ref = static_cast<int>(rng.uniform_int(0, len - 1));
        Tensor in = tsg_input_tensor(clip.masks[static_cast<size_t>(t)],
                                     clip.masks[static_cast<size_t>(ref)], classes);
        std::copy(in.v.begin(), in.v.end(),
                  batch.masks.v.begin() + static_cast<int64_t>(i) * 2 * classes * plane);
        for (int64_t p = 0; p < plane; ++p)
            batch.targets.v[static_cast<size_t>(i) * plane + p] =
                clip.masks[static_cast<size_t>(t)].labels[static_cast<size_t>(p)];
        batch.refs[static_cast<size_t>(i)] = {&clip, t};
    }
    return batch;
}

}  // namespace detail

// Train with weighted CE alone for phase 1, then add lambda_sync times the
// frozen-expert loss on T_v-frame windows of generated (softmax) masks.
// Gradients reach the TSG and its speech towers only.
inline TSGTrainResult train_tsg(TSGModel& model, const SyncExpert* expert, const SyncCorpus& corpus,
                                const RunConfig& cfg, const MetricsCallback& log = {}) {
    if (corpus.train.empty()) throw InvalidInput("train_tsg: empty corpus");
    const int classes = corpus.classes;
    const std::string loss_kind = cfg.get_str("tsg.loss");
    const bool l1_mode = loss_kind == "l1-labels";
    const bool weighted = loss_kind == "wce";
    if (l1_mode != model.config().label_regression)
        throw InvalidInput("train_tsg: model head does not match tsg.loss=" + loss_kind);

    std::vector<SegmentationMap> all_masks;
    for (const auto& c : corpus.train)
        all_masks.insert(all_masks.end(), c.masks.begin(), c.masks.end());
    RegionWeights weights = compute_class_weights(all_masks, classes);

    Rng rng(static_cast<uint64_t>(cfg.get_int("seed")) ^ 0x545347ull);
    AdamConfig ac;
    ac.lr = static_cast<float>(cfg.get_float("tsg.lr"));
    ac.beta1 = static_cast<float>(cfg.get_float("tsg.beta1"));
    ac.beta2 = static_cast<float>(cfg.get_float("tsg.beta2"));
    Adam opt(ac);

    const int64_t phase1 = cfg.get_int("tsg.phase1_steps");
    const int64_t phase2 = cfg.get_bool("tsg.use_syncnet") && !l1_mode ? cfg.get_int("tsg.phase2_steps") : 0;
    const int64_t phase2_nosync =
        !cfg.get_bool("tsg.use_syncnet") && !l1_mode ? cfg.get_int("tsg.phase2_steps") : 0;
    const int batch = static_cast<int>(cfg.get_int("tsg.batch"));
    const int wbatch = static_cast<int>(cfg.get_int("tsg.window_batch"));
    const float lambda_sync = static_cast<float>(cfg.get_float("tsg.lambda_sync"));
    if (phase2 > 0 && !expert) throw InvalidInput("train_tsg: sync phase requested without an expert");

    auto pick_frame = [&](int margin) {
        size_t ci = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(corpus.train.size()) - 1));
        int len = static_cast<int>(corpus.train[ci].masks.size());
        int t = static_cast<int>(rng.uniform_int(margin, len - margin - 1));
        return std::make_pair(ci, t);
    };

    TSGTrainResult result;
    const int half = kSyncWindowFrames / 2;
    // phase-2-style steps also run for the no-syncnet ablation so both
    // pipelines see the same number of updates.
    const int64_t total_steps = phase1 + phase2 + phase2_nosync;
    for (int64_t step = 1; step <= total_steps; ++step) {
        const bool sync_phase = step > phase1 && phase2 > 0;
        for (Param* p : model.all_params()) p->zero_grad();
        Graph g;
        Node* loss = nullptr;
        TSGLossReport report;

        if (!sync_phase) {
            std::vector<std::pair<size_t, int>> picks;
            for (int i = 0; i < batch; ++i) picks.push_back(pick_frame(0));
            auto b = detail::build_tsg_batch(corpus.train, picks, classes, rng);
            Node* speech = speech_embedding_batch(g, model, b.refs);
            Node* logits = model.forward(g, g.input(b.masks), speech);
            if (l1_mode) {
                Tensor target({batch, 1, logits->val.dim(2), logits->val.dim(3)});
                for (int64_t i = 0; i < target.numel(); ++i)
                    target[i] = static_cast<float>(b.targets.v[static_cast<size_t>(i)]) /
                                static_cast<float>(classes - 1);
                loss = l1_loss(g, logits, g.input(target));
            } else {
                loss = cross_entropy(g, logits, b.targets, weighted ? weights.w : std::vector<float>{});
            }
            report.wce = loss->val[0];
            report.total = report.wce;
        } else {
            std::vector<std::pair<size_t, int>> picks;  // one pick per window frame
            std::vector<int> centers;
            for (int wi = 0; wi < wbatch; ++wi) {
                auto [ci, t] = pick_frame(half);
                centers.push_back(t);
                for (int f = -half; f <= half; ++f) picks.emplace_back(ci, t + f);
            }
            auto b = detail::build_tsg_batch(corpus.train, picks, classes, rng);
            Node* speech = speech_embedding_batch(g, model, b.refs);
            Node* logits = model.forward(g, g.input(b.masks), speech);
            Node* wce = cross_entropy(g, logits, b.targets, weighted ? weights.w : std::vector<float>{});

            Node* soft = softmax_channels(g, logits);
            int h = soft->val.dim(2), w = soft->val.dim(3);
            Node* lower = slice_rows(g, soft, h / 2, h);
            Node* windows = reshape(g, lower, {wbatch, kSyncWindowFrames * classes, h - h / 2, w});
            std::vector<FrameRef> center_refs;
            for (int wi = 0; wi < wbatch; ++wi)
                center_refs.push_back(b.refs[static_cast<size_t>(wi) * kSyncWindowFrames + half]);
            Tensor speech_wins({wbatch, 1, kMelWindowFrames, 80});
            for (int wi = 0; wi < wbatch; ++wi) {
                AudioWindow awin = window_for_frame(center_refs[static_cast<size_t>(wi)].clip->mel,
                                                    center_refs[static_cast<size_t>(wi)].frame);
                std::copy(awin.segment.v.begin(), awin.segment.v.end(),
                          speech_wins.v.begin() + static_cast<int64_t>(wi) * kMelWindowFrames * 80);
            }
            Node* me = expert->embed_masks(g, windows, /*frozen=*/true);
            Node* se = expert->embed_speech(g, g.input(speech_wins), /*frozen=*/true);
            Node* cos = cosine_rows(g, se, me, kSyncEpsNorm);
            Node* sync = sync_bce(g, cos, std::vector<int>(static_cast<size_t>(wbatch), 1));
            loss = add(g, wce, scale(g, sync, lambda_sync));
            report.wce = wce->val[0];
            report.sync = sync->val[0];
            report.total = loss->val[0];
        }

        if (!std::isfinite(report.total))
            throw Divergence("tsg: non-finite loss at step " + std::to_string(step) +
                             " (wce=" + std::to_string(report.wce) +
                             ", sync=" + std::to_string(report.sync) + ")");
        g.backward(loss);
        opt.step(model.all_params());
        result.last_report = report;
        result.steps = step;
        if (log && (step % 50 == 0 || step == 1)) {
            log("tsg_total", step, report.total);
            if (sync_phase) log("tsg_sync", step, report.sync);
        }
    }
    return result;
}

enum class PoseSourceMode { SelfDriven, Autoregressive };

// One mask per requested frame. Self-driven mode occludes the ground-truth
// mask of each frame as pose source; autoregressive mode feeds back the
// previous output (frame 0 starts from the identity mask).
inline std::vector<SegmentationMap> generate_sequence(
    const TSGModel& model, const SegmentationMap& identity_mask, const MelSpectrogram& mel,
    int num_frames, PoseSourceMode mode = PoseSourceMode::SelfDriven,
    const std::vector<SegmentationMap>* gt_masks = nullptr) {
    const int classes = model.config().classes;
    if (num_frames <= 0) throw InvalidInput("generate_sequence: positive frame count required");
    int last_start = round_half_up((num_frames - 1) * kMelFramesPerVideoFrame);
    if (last_start >= mel.num_frames())
        throw InvalidInput("generate_sequence: mel (" + std::to_string(mel.num_frames()) +
                           " rows) shorter than " + std::to_string(num_frames) + " frames");
    if (mode == PoseSourceMode::SelfDriven &&
        (!gt_masks || static_cast<int>(gt_masks->size()) < num_frames))
        throw InvalidInput("generate_sequence: self-driven mode requires ground-truth masks");

    ClipAV fake_clip;
    fake_clip.mel = mel;
    std::vector<SegmentationMap> out;
    out.reserve(static_cast<size_t>(num_frames));

    const int bs = mode == PoseSourceMode::Autoregressive ? 1 : 16;
    for (int start = 0; start < num_frames; start += bs) {
        int n = std::min(bs, num_frames - start);
        Graph g;
        Tensor masks({n, 2 * classes, identity_mask.height, identity_mask.width});
        std::vector<FrameRef> refs;
        const int64_t block = static_cast<int64_t>(2) * classes * identity_mask.height * identity_mask.width;
        for (int i = 0; i < n; ++i) {
            const SegmentationMap& pose =
                mode == PoseSourceMode::SelfDriven
                    ? (*gt_masks)[static_cast<size_t>(start + i)]
                    : (out.empty() ? identity_mask : out.back());
            Tensor in = tsg_input_tensor(pose, identity_mask, classes);
            std::copy(in.v.begin(), in.v.end(), masks.v.begin() + static_cast<int64_t>(i) * block);
            refs.push_back({&fake_clip, start + i});
        }
        Node* speech = speech_embedding_batch(g, model, refs, /*frozen=*/true);
        Node* logits = model.forward(g, g.input(masks), speech, /*frozen=*/true);
        for (int i = 0; i < n; ++i) {
            int h = logits->val.dim(2), w = logits->val.dim(3);
            if (model.config().label_regression) {
                SegmentationMap m(h, w);
                for (int p = 0; p < h * w; ++p) {
                    float v = logits->val[(static_cast<int64_t>(i)) * h * w + p];
                    int lab = static_cast<int>(std::lround(v * static_cast<float>(classes - 1)));
                    m.labels[static_cast<size_t>(p)] = std::clamp(lab, 0, classes - 1);
                }
                out.push_back(std::move(m));
            } else {
                Tensor chw({classes, h, w});
                std::copy_n(logits->val.v.begin() + static_cast<int64_t>(i) * classes * h * w,
                            static_cast<int64_t>(classes) * h * w, chw.v.begin());
                out.push_back(decode_argmax(chw));
            }
        }
    }
    return out;
}

}  // namespace segface
