// tsg: loss oracles and reduction identities, gradient checks, shape and
// determinism contracts, and the single-batch overfit sanity run.

#include <gtest/gtest.h>

#include "segface/harness/synth.hpp"
#include "segface/sync/train.hpp"
#include "segface/tsg/train.hpp"

using namespace segface;

namespace {
Tensor random_logits(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.v) v = rng.uniform(-2.0f, 2.0f);
    return t;
}
}  // namespace

TEST(CeLoss, PerfectLogitsGiveZero) {
    IntGrid targets({1, 2, 2});
    targets.v = {0, 1, 2, 3};
    Tensor logits({1, 4, 2, 2});
    for (int c = 0; c < 4; ++c)
        for (int p = 0; p < 4; ++p)
            logits.v[static_cast<size_t>(c * 4 + p)] = (targets.v[static_cast<size_t>(p)] == c) ? 60.0f : -60.0f;
    EXPECT_NEAR(ce_loss_value(logits, targets), 0.0f, 1e-6f);
}

TEST(CeLoss, UniformLogitsGiveLnTwelve) {
    Tensor logits({2, 12, 4, 4});
    IntGrid targets({2, 4, 4});
    EXPECT_NEAR(ce_loss_value(logits, targets), 2.484907f, 1e-5f);
}

TEST(CeLoss, MatchesPerPixelOracle) {
    Rng rng(1);
    Tensor logits = random_logits({2, 5, 4, 4}, rng);
    IntGrid targets({2, 4, 4});
    for (auto& t : targets.v) t = static_cast<int32_t>(rng.uniform_int(0, 4));
    // oracle: explicit per-pixel softmax + log
    double total = 0.0;
    for (int b = 0; b < 2; ++b)
        for (int p = 0; p < 16; ++p) {
            double mx = -1e30;
            for (int c = 0; c < 5; ++c)
                mx = std::max(mx, static_cast<double>(logits.v[static_cast<size_t>((b * 5 + c) * 16 + p)]));
            double z = 0.0;
            for (int c = 0; c < 5; ++c)
                z += std::exp(logits.v[static_cast<size_t>((b * 5 + c) * 16 + p)] - mx);
            int t = targets.v[static_cast<size_t>(b * 16 + p)];
            total += std::log(z) + mx - logits.v[static_cast<size_t>((b * 5 + t) * 16 + p)];
        }
    EXPECT_NEAR(ce_loss_value(logits, targets), total / 32.0, 1e-6);
    EXPECT_GE(ce_loss_value(logits, targets), 0.0f);
}

TEST(WeightedCe, UnitWeightsReduceToCeExactly) {
    Rng rng(2);
    Tensor logits = random_logits({2, 6, 4, 4}, rng);
    IntGrid targets({2, 4, 4});
    for (auto& t : targets.v) t = static_cast<int32_t>(rng.uniform_int(0, 5));
    RegionWeights ones;
    ones.w.assign(6, 1.0f);
    EXPECT_EQ(weighted_ce_loss_value(logits, targets, ones), ce_loss_value(logits, targets));
}

TEST(WeightedCe, LinearInWeights) {
    Rng rng(3);
    Tensor logits = random_logits({1, 3, 2, 2}, rng);
    IntGrid targets({1, 2, 2});
    for (auto& t : targets.v) t = 1;  // single present class
    RegionWeights w1, w2;
    w1.w = {1.0f, 1.0f, 1.0f};
    w2.w = {1.0f, 2.0f, 1.0f};
    EXPECT_NEAR(weighted_ce_loss_value(logits, targets, w2),
                2.0f * weighted_ce_loss_value(logits, targets, w1), 1e-6f);
}

TEST(WeightedCe, MatchesPerPixelOracleWithWeights) {
    Rng rng(4);
    Tensor logits = random_logits({2, 4, 4, 4}, rng);
    IntGrid targets({2, 4, 4});
    for (auto& t : targets.v) t = static_cast<int32_t>(rng.uniform_int(0, 3));
    RegionWeights w;
    w.w = {0.4f, 1.3f, 2.2f, 0.9f};
    double total = 0.0;
    for (int b = 0; b < 2; ++b)
        for (int p = 0; p < 16; ++p) {
            double mx = -1e30;
            for (int c = 0; c < 4; ++c)
                mx = std::max(mx, static_cast<double>(logits.v[static_cast<size_t>((b * 4 + c) * 16 + p)]));
            double z = 0.0;
            for (int c = 0; c < 4; ++c)
                z += std::exp(logits.v[static_cast<size_t>((b * 4 + c) * 16 + p)] - mx);
            int t = targets.v[static_cast<size_t>(b * 16 + p)];
            total += w.w[static_cast<size_t>(t)] *
                     (std::log(z) + mx - logits.v[static_cast<size_t>((b * 4 + t) * 16 + p)]);
        }
    EXPECT_NEAR(weighted_ce_loss_value(logits, targets, w), total / 32.0, 1e-6);
}

TEST(WeightedCe, GradientMatchesFiniteDifferences) {
    Rng rng(5);
    const float h = 1e-3f;
    for (int rep = 0; rep < 20; ++rep) {
        Tensor logits = random_logits({1, 4, 4, 4}, rng);
        IntGrid targets({1, 4, 4});
        for (auto& t : targets.v) t = static_cast<int32_t>(rng.uniform_int(0, 3));
        std::vector<float> w = {0.5f, 1.5f, 0.8f, 2.0f};
        Graph g;
        Node* x = g.leaf(logits);
        g.backward(cross_entropy(g, x, targets, w));
        double worst = 0.0;
        for (int64_t i = 0; i < logits.numel(); ++i) {
            Tensor lp = logits, lm = logits;
            lp[i] += h;
            lm[i] -= h;
            Graph gp, gm;
            double fp = cross_entropy(gp, gp.input(lp), targets, w)->val[0];
            double fm = cross_entropy(gm, gm.input(lm), targets, w)->val[0];
            double fd = (fp - fm) / (2.0 * h);
            worst = std::max(worst, std::fabs(fd - x->grad[i]) / std::max(std::fabs(fd), 1e-2));
        }
        EXPECT_LT(worst, 1e-3);
    }
}

namespace {
TSGConfig small_tsg() {
    TSGConfig cfg;
    cfg.classes = 12;
    cfg.resolution = 64;
    cfg.base_width = 12;
    cfg.d_local = 32;
    cfg.d_ctx = 32;
    cfg.ctx_embed_dim = 24;
    cfg.ctx_blocks = 1;
    return cfg;
}

SyncCorpus tsg_corpus(int clips, int frames, uint64_t seed) {
    SyncCorpus corpus;
    corpus.classes = 12;
    for (int c = 0; c < clips; ++c) {
        IdentityParams id = make_identity(seed + static_cast<uint64_t>(c));
        std::vector<float> art = make_articulation(seed * 17 + static_cast<uint64_t>(c), frames);
        ClipAV clip;
        clip.identity = c;
        for (int t = 0; t < frames; ++t)
            clip.masks.push_back(render_frame(id, art[static_cast<size_t>(t)], t).mask);
        clip.mel = compute_mel(synthesize_audio(art, seed + 3), 16000);
        corpus.train.push_back(std::move(clip));
    }
    return corpus;
}
}  // namespace

TEST(TsgModel, ShapeContractAndDeterminism) {
    TSGModel model(small_tsg());
    SyncCorpus corpus = tsg_corpus(1, 20, 11);
    const auto& clip = corpus.train[0];
    Tensor input = tsg_input_tensor(clip.masks[3], clip.masks[7], 12);
    auto run = [&] {
        Graph g;
        std::vector<FrameRef> refs = {{&clip, 3}};
        Node* speech = speech_embedding_batch(g, model, refs, true);
        Node* logits = model.forward(g, g.input(input), speech, true);
        return logits->val;
    };
    Tensor a = run(), b = run();
    EXPECT_EQ(a.shape, (std::vector<int>{1, 12, 64, 64}));
    EXPECT_EQ(a.v, b.v);  // bit-identical across calls
}

TEST(TsgModel, RejectsBadResolution) {
    TSGConfig cfg = small_tsg();
    cfg.resolution = 60;  // not a multiple of 2^depth
    EXPECT_THROW(TSGModel{cfg}, InvalidInput);
}

TEST(TsgModel, PoseSourceOcclusionIsRespectedInInput) {
    SyncCorpus corpus = tsg_corpus(1, 8, 13);
    Tensor input = tsg_input_tensor(corpus.train[0].masks[0], corpus.train[0].masks[1], 12);
    // channels [0,12): occluded pose source; rows >= 32 must be all zero
    for (int c = 0; c < 12; ++c)
        for (int i = 32; i < 64; ++i)
            for (int j = 0; j < 64; ++j) EXPECT_EQ(input.at(0, c, i, j), 0.0f);
    // identity reference channels are a full one-hot: per-pixel sum 1
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 64; ++j) {
            float s = 0.0f;
            for (int c = 12; c < 24; ++c) s += input.at(0, c, i, j);
            ASSERT_EQ(s, 1.0f);
        }
}

TEST(TsgTrain, SingleBatchOverfitDropsWceBelowPoint05) {
    // overfit sanity: a U-Net must memorize one batch
    SyncCorpus corpus = tsg_corpus(1, 12, 17);
    TSGModel model(small_tsg());
    RunConfig cfg = RunConfig::defaults();
    cfg.set("tsg.batch", "4");
    cfg.set("tsg.phase1_steps", "500");
    cfg.set("tsg.phase2_steps", "0");
    cfg.set("tsg.use_syncnet", "false");
    cfg.set("seed", "99");
    // restrict to 4 frames so every step sees the same tiny set
    corpus.train[0].masks.resize(4);
    TSGTrainResult r = train_tsg(model, nullptr, corpus, cfg);
    EXPECT_LT(r.last_report.wce, 0.05f);
}

TEST(TsgGenerate, SequenceShapesAndMelGuard) {
    SyncCorpus corpus = tsg_corpus(1, 30, 19);
    TSGModel model(small_tsg());
    const auto& clip = corpus.train[0];
    auto seq = generate_sequence(model, clip.masks[0], clip.mel, 25, PoseSourceMode::SelfDriven,
                                 &clip.masks);
    EXPECT_EQ(seq.size(), 25u);
    for (const auto& m : seq) {
        EXPECT_EQ(m.height, 64);
        EXPECT_EQ(m.width, 64);
        for (auto v : m.labels) {
            EXPECT_GE(v, 0);
            EXPECT_LT(v, 12);
        }
    }
    // mel shorter than requested frames
    EXPECT_THROW(generate_sequence(model, clip.masks[0], clip.mel, 500,
                                   PoseSourceMode::SelfDriven, &clip.masks),
                 InvalidInput);
    // autoregressive mode needs no ground truth
    auto ar = generate_sequence(model, clip.masks[0], clip.mel, 6, PoseSourceMode::Autoregressive);
    EXPECT_EQ(ar.size(), 6u);
}

TEST(TsgTrain, LabelRegressionHeadMatchesLossMode) {
    TSGConfig cfg = small_tsg();
    cfg.label_regression = true;
    TSGModel model(cfg);
    SyncCorpus corpus = tsg_corpus(1, 12, 23);
    RunConfig rc = RunConfig::defaults();
    rc.set("tsg.loss", "l1-labels");
    rc.set("tsg.phase1_steps", "3");
    rc.set("tsg.phase2_steps", "0");
    rc.set("tsg.batch", "2");
    TSGTrainResult r = train_tsg(model, nullptr, corpus, rc);
    EXPECT_TRUE(std::isfinite(r.last_report.wce));
    // mismatched head/loss must fail loudly
    TSGModel wrong(small_tsg());
    EXPECT_THROW(train_tsg(wrong, nullptr, corpus, rc), InvalidInput);
}
