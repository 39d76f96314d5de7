// sync_expert: probability/loss values, gradient checks against central
// finite differences, scale invariance, sampling statistics.

#include <gtest/gtest.h>

#include "segface/harness/synth.hpp"
#include "segface/sync/train.hpp"

using namespace segface;

TEST(SyncProbability, KnownValues) {
    std::vector<float> u = {1.0f, 0.0f, 0.0f};
    EXPECT_FLOAT_EQ(sync_probability(u, u).p, 1.0f);
    std::vector<float> v = {0.0f, 1.0f, 0.0f};
    EXPECT_FLOAT_EQ(sync_probability(u, v).p, kSyncEpsProb);  // orthogonal -> clamp floor
    std::vector<float> zero = {0.0f, 0.0f, 0.0f};
    EXPECT_FLOAT_EQ(sync_probability(zero, u).p, kSyncEpsProb);  // eps guard
    std::vector<float> w4 = {1.0f, 0.0f, 0.0f, 0.0f};
    EXPECT_THROW(sync_probability(u, w4), InvalidInput);
}

TEST(SyncProbability, InvariantToPositiveRescaling) {
    Rng rng(1);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<float> a(16), b(16);
        for (auto& x : a) x = rng.uniform(-1.0f, 1.0f);
        for (auto& x : b) x = rng.uniform(-1.0f, 1.0f);
        float base = sync_probability(a, b).p;
        float s1 = rng.uniform(0.1f, 10.0f), s2 = rng.uniform(0.1f, 10.0f);
        std::vector<float> a2 = a, b2 = b;
        for (auto& x : a2) x *= s1;
        for (auto& x : b2) x *= s2;
        EXPECT_NEAR(sync_probability(a2, b2).p, base, 1e-5f);
    }
}

TEST(SyncLoss, KnownValues) {
    EXPECT_NEAR(sync_loss({{0.5f}}, {1}), 0.693147f, 1e-6f);
    EXPECT_FLOAT_EQ(sync_loss({{1.0f}}, {1}), 0.0f);
    // mixed batch {pos p=0.9, neg p=0.1} -> (-ln .9 - ln .9)/2
    EXPECT_NEAR(sync_loss({{0.9f}, {0.1f}}, {1, 0}), 0.105361f, 1e-6f);
    EXPECT_THROW(sync_loss({}, {}), InvalidInput);
}

TEST(SyncLoss, MonotoneInP) {
    // decreasing in p for positives, increasing for negatives
    float prev_pos = 1e9f, prev_neg = -1.0f;
    for (float p = 0.05f; p < 1.0f; p += 0.05f) {
        float lp = sync_loss({{p}}, {1});
        float ln = sync_loss({{p}}, {0});
        EXPECT_LT(lp, prev_pos);
        EXPECT_GT(ln, prev_neg);
        prev_pos = lp;
        prev_neg = ln;
    }
}

TEST(SyncLoss, FiniteAtExtremes) {
    EXPECT_TRUE(std::isfinite(sync_loss({{kSyncEpsProb}}, {1})));
    EXPECT_TRUE(std::isfinite(sync_loss({{1.0f}}, {0})));
}

// Eq.-level gradient check: d(sync_loss)/d(embeddings) via the cosine path
// against central differences at points away from the clamp boundaries.
TEST(SyncLoss, GradientMatchesFiniteDifferences) {
    Rng rng(2);
    const float h = 1e-4f;
    int checked = 0;
    while (checked < 20) {
        const int d = 8;
        Tensor a({2, d}), b({2, d});
        for (auto& x : a.v) x = rng.uniform(0.2f, 1.0f);
        for (auto& x : b.v) x = rng.uniform(0.2f, 1.0f);
        std::vector<int> labels = {1, 0};
        {
            Graph g;
            Node* c = cosine_rows(g, g.input(a), g.input(b));
            bool boundary = false;
            for (int i = 0; i < 2; ++i)
                if (c->val[i] > 0.999f || c->val[i] < 1e-6f) boundary = true;
            if (boundary) continue;
        }
        auto eval = [&](const Tensor& at, const Tensor& bt) {
            Graph g;
            Node* c = cosine_rows(g, g.input(at), g.input(bt));
            return sync_bce(g, c, labels)->val[0];
        };
        Graph g;
        Node* an = g.leaf(a);
        Node* bn = g.leaf(b);
        Node* loss = sync_bce(g, cosine_rows(g, an, bn), labels);
        g.backward(loss);
        double worst = 0.0;
        for (int64_t i = 0; i < a.numel(); ++i) {
            Tensor ap = a, am = a;
            ap[i] += h;
            am[i] -= h;
            double fd = (eval(ap, b) - eval(am, b)) / (2.0 * h);
            worst = std::max(worst, std::fabs(fd - an->grad[i]) /
                                        std::max(std::fabs(fd), 1e-3));
            Tensor bp = b, bm = b;
            bp[i] += h;
            bm[i] -= h;
            fd = (eval(a, bp) - eval(a, bm)) / (2.0 * h);
            worst = std::max(worst, std::fabs(fd - bn->grad[i]) /
                                        std::max(std::fabs(fd), 1e-3));
        }
        EXPECT_LT(worst, 1e-3) << "gradient mismatch at check " << checked;
        ++checked;
    }
}

TEST(SyncExpert, EmbeddingShapesAndChannelGuard) {
    SyncExpertConfig cfg;
    cfg.classes = 12;
    cfg.height = 64;
    cfg.width = 64;
    cfg.base_width = 16;
    SyncExpert expert(cfg);
    Graph g;
    Tensor masks({2, 60, 32, 64});
    Tensor speech({2, 1, 16, 80});
    Node* me = expert.embed_masks(g, g.input(masks));
    Node* se = expert.embed_speech(g, g.input(speech));
    EXPECT_EQ(me->val.shape, (std::vector<int>{2, 512}));
    EXPECT_EQ(se->val.shape, (std::vector<int>{2, 512}));
    // wrong channel count must fail loudly, never silently
    Tensor bad({2, 55, 32, 64});
    EXPECT_THROW(expert.embed_masks(g, g.input(bad)), InvalidInput);
}

namespace {
SyncCorpus tiny_corpus(int clips, int frames, uint64_t seed) {
    SyncCorpus corpus;
    corpus.classes = 12;
    for (int c = 0; c < clips; ++c) {
        IdentityParams id = make_identity(seed + static_cast<uint64_t>(c));
        std::vector<float> art = make_articulation(seed * 31 + static_cast<uint64_t>(c), frames);
        ClipAV clip;
        clip.identity = c;
        for (int t = 0; t < frames; ++t)
            clip.masks.push_back(render_frame(id, art[static_cast<size_t>(t)], t).mask);
        clip.mel = compute_mel(synthesize_audio(art, seed + 7 * static_cast<uint64_t>(c)), 16000);
        corpus.train.push_back(std::move(clip));
    }
    return corpus;
}
}  // namespace

TEST(SamplePair, LabelsAndSkipSignal) {
    SyncCorpus corpus = tiny_corpus(2, 60, 5);
    Rng rng(3);
    // offset-0 windows are labeled 1, shifted ones 0 (checked en masse below);
    // short clip yields the skip signal
    ClipAV short_clip;
    short_clip.masks.resize(10);  // < T_v + 10
    for (auto& m : short_clip.masks) m = SegmentationMap(64, 64);
    short_clip.mel = corpus.train[0].mel;
    std::vector<ClipAV> clips = {short_clip};
    EXPECT_FALSE(sample_pair(clips, 0, rng, 12).has_value());
}

TEST(SamplePair, PositiveFractionConcentratesAtHalf) {
    SyncCorpus corpus = tiny_corpus(2, 80, 6);
    Rng rng(4);
    int positives = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        auto s = sample_pair(corpus.train, static_cast<size_t>(i % 2), rng, 12);
        ASSERT_TRUE(s.has_value());
        positives += s->label;
        EXPECT_EQ(s->mask_window.shape, (std::vector<int>{60, 32, 64}));
        EXPECT_EQ(s->speech.shape, (std::vector<int>{16, 80}));
    }
    double frac = static_cast<double>(positives) / n;
    EXPECT_NEAR(frac, 0.5, 0.02);
}

TEST(TrainExpert, UntrainedIsChanceLevel) {
    SyncCorpus corpus = tiny_corpus(2, 60, 7);
    SyncExpertConfig cfg;
    cfg.base_width = 16;
    SyncExpert expert(cfg);
    Rng rng(8);
    float acc = evaluate_sync_accuracy(expert, corpus.train, 12, 300, rng);
    EXPECT_NEAR(acc, 0.5f, 0.08f);
}

TEST(TrainExpert, LossDropsOverAFewSteps) {
    SyncCorpus corpus = tiny_corpus(2, 60, 9);
    SyncExpertConfig cfg;
    cfg.base_width = 16;
    SyncExpert expert(cfg);
    RunConfig rc = RunConfig::defaults();
    rc.set("sync.steps", "30");
    rc.set("sync.eval_every", "30");
    rc.set("sync.eval_samples", "64");
    rc.set("sync.batch", "8");
    float first = -1.0f;
    auto log = [&](const std::string& event, int64_t step, double value) {
        if (event == "sync_loss" && step == 1) first = static_cast<float>(value);
    };
    SyncTrainResult r = train_expert(expert, corpus, rc, log);
    EXPECT_GT(first, 0.0f);
    EXPECT_LT(r.final_loss, first);
}
