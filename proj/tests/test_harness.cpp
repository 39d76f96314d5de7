// harness: corpus generation contracts (counts, determinism, articulation
// correlation, mel identifiability), config parsing, checkpoint container.

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "segface/core/serialize.hpp"
#include "segface/harness/corpus.hpp"

using namespace segface;

namespace {
std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

RunConfig tiny_corpus_config(const std::string& seed = "321") {
    RunConfig cfg = RunConfig::defaults();
    cfg.set("corpus.identities", "2");
    cfg.set("corpus.train_frames", "40");
    cfg.set("corpus.test_frames", "12");
    cfg.set("seed", seed);
    return cfg;
}
}  // namespace

TEST(Renderer, AllTwelveClassesEveryFrameAndMouthTracksArticulation) {
    IdentityParams id = make_identity(17);
    std::vector<float> arts = {0.0f, 0.25f, 0.5f, 0.75f, 1.0f};
    for (float a : arts) {
        RenderedFrame f = render_frame(id, a, 3);
        for (int c = 0; c < 12; ++c) EXPECT_GT(count_label(f.mask, c), 0) << "class " << c;
        // mouth interior height at the mouth center column equals the
        // articulation mapping exactly
        int h = 0;
        for (int i = 0; i < 64; ++i)
            if (f.mask.at(i, 32) == INNER_MOUTH) ++h;
        EXPECT_EQ(h, mouth_opening_rows(a));
    }
}

TEST(Renderer, StrideEightAnchorsCoverMostRegions) {
    // regions the encoder must see at its coarsest scale in every frame
    IdentityParams id = make_identity(23);
    for (int t = 0; t < 50; ++t) {
        RenderedFrame f = render_frame(id, 0.3f + 0.4f * std::sin(0.3f * t), t);
        SegmentationMap ds = downsample(f.mask, 8, 8);
        std::set<int32_t> present(ds.labels.begin(), ds.labels.end());
        for (int32_t c : {BACKGROUND, SKIN, BROW, EYE, GLASSES, EAR, NOSE, UPPER_LIP, NECK, HAIR})
            EXPECT_TRUE(present.count(c)) << "class " << c << " missing at stride 8, frame " << t;
    }
}

TEST(Corpus, CountsSplitsAndDeterminism) {
    RunConfig cfg = tiny_corpus_config();
    auto dir_a = temp_dir("segface_corpus_a");
    auto dir_b = temp_dir("segface_corpus_b");
    generate_corpus(cfg, dir_a);
    generate_corpus(cfg, dir_b);

    LoadedCorpus a = load_corpus(dir_a);
    EXPECT_EQ(a.clips.size(), 4u);  // 2 identities x {train, test}
    int train_frames = 0, test_frames = 0;
    for (const auto& c : a.clips) {
        (c.split == "train" ? train_frames : test_frames) += static_cast<int>(c.images.size());
        EXPECT_EQ(c.images.size(), c.masks.size());
    }
    EXPECT_EQ(train_frames, 80);
    EXPECT_EQ(test_frames, 24);

    // bit-identical regeneration under the same seed
    for (const auto& c : a.clips) {
        for (size_t t = 0; t < c.images.size(); t += 9) {
            auto pa = dir_a / c.name / frame_name("frame_", static_cast<int>(t), "ppm");
            auto pb = dir_b / c.name / frame_name("frame_", static_cast<int>(t), "ppm");
            std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
            std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
            std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
            EXPECT_EQ(sa, sb);
        }
    }
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}

TEST(Corpus, ArticulationCorrelatesWithRenderedMouthHeight) {
    RunConfig cfg = tiny_corpus_config("55");
    auto dir = temp_dir("segface_corpus_corr");
    generate_corpus(cfg, dir);
    LoadedCorpus corpus = load_corpus(dir);
    std::vector<double> xs, ys;
    for (const auto& clip : corpus.clips) {
        for (size_t t = 0; t < clip.masks.size(); ++t) {
            int h = 0;
            for (int i = 0; i < corpus.resolution; ++i)
                if (clip.masks[t].at(i, corpus.resolution / 2) == INNER_MOUTH) ++h;
            xs.push_back(clip.articulation[t]);
            ys.push_back(h);
        }
    }
    // Pearson correlation, oracle = direct formula
    double mx = 0, my = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(ys.size());
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    double r = sxy / std::sqrt(sxx * syy);
    EXPECT_GT(r, 0.99);
    std::filesystem::remove_all(dir);
}

TEST(Corpus, LinearProbeRecoversArticulationFromMel) {
    // ridge regression from each frame's 16x80 mel window (mean over time)
    // onto the articulation parameter; identifiability guarantee R^2 > 0.9
    RunConfig cfg = tiny_corpus_config("77");
    auto dir = temp_dir("segface_corpus_probe");
    generate_corpus(cfg, dir);
    LoadedCorpus corpus = load_corpus(dir);
    std::vector<std::array<double, 81>> rows;
    std::vector<double> targets;
    for (const auto& clip : corpus.clips) {
        for (size_t t = 0; t < clip.masks.size(); ++t) {
            AudioWindow w = window_for_frame(clip.mel, static_cast<int>(t));
            std::array<double, 81> row{};
            for (int m = 0; m < 80; ++m) {
                double s = 0;
                for (int r = 0; r < 16; ++r) s += w.segment.at(r, m);
                row[static_cast<size_t>(m)] = s / 16.0;
            }
            row[80] = 1.0;  // bias
            rows.push_back(row);
            targets.push_back(clip.articulation[t]);
        }
    }
    const int n = static_cast<int>(rows.size()), d = 81;
    Eigen::MatrixXd x(n, d);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) x(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
        y(i) = targets[static_cast<size_t>(i)];
    }
    Eigen::MatrixXd gram = x.transpose() * x + 1e-3 * Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd beta = gram.ldlt().solve(x.transpose() * y);
    Eigen::VectorXd pred = x * beta;
    double ss_res = (y - pred).squaredNorm();
    double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
    double r2 = 1.0 - ss_res / ss_tot;
    EXPECT_GT(r2, 0.9);
    std::filesystem::remove_all(dir);
}

TEST(Config, ParseTypesIncludesAndEnvOverrides) {
    auto dir = temp_dir("segface_cfg");
    {
        std::ofstream base(dir / "base.cfg");
        base << "# base settings\n"
             << "resolution = 64\n"
             << "tsg.lambda_sync = 0.05\n";
        std::ofstream main(dir / "main.cfg");
        main << "include base.cfg\n"
             << "tsg.use_syncnet = true\n"
             << "sgi.steps = 123\n";
    }
    RunConfig cfg = RunConfig::from_file(dir / "main.cfg", /*apply_env=*/false);
    EXPECT_EQ(cfg.get_int("resolution"), 64);
    EXPECT_NEAR(cfg.get_float("tsg.lambda_sync"), 0.05, 1e-12);
    EXPECT_TRUE(cfg.get_bool("tsg.use_syncnet"));
    EXPECT_EQ(cfg.get_int("sgi.steps"), 123);
    // defaults still present underneath
    EXPECT_EQ(cfg.get_int("classes"), 12);

    setenv("SEGFACE_SGI_STEPS", "77", 1);
    RunConfig cfg2 = RunConfig::from_file(dir / "main.cfg");
    EXPECT_EQ(cfg2.get_int("sgi.steps"), 77);
    unsetenv("SEGFACE_SGI_STEPS");

    // hash covers every key and is order-independent (map is sorted)
    RunConfig h1 = RunConfig::defaults(), h2 = RunConfig::defaults();
    EXPECT_EQ(h1.hash(), h2.hash());
    h2.set("tsg.lambda_sync", "0.04");
    EXPECT_NE(h1.hash(), h2.hash());
    EXPECT_THROW(cfg.get_int("tsg.loss"), InvalidInput);
    EXPECT_THROW(cfg.get_str("no.such.key"), InvalidInput);
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RoundTripWithOptimizerState) {
    auto dir = temp_dir("segface_ckpt");
    ParamSet ps;
    Rng rng(5);
    Param& a = ps.add("m.a", kaiming_uniform(rng, {4, 3}, 3));
    Param& b = ps.add("m.b", kaiming_uniform(rng, {7}, 7));
    for (int64_t i = 0; i < a.value.numel(); ++i) a.adam_m[i] = 0.25f * static_cast<float>(i);
    Adam opt;
    CheckpointHeader hdr;
    hdr.module = "unit_test";
    hdr.step = 42;
    hdr.config_hash = 0xABCDu;
    hdr.palette_hash = canonical_palette().hash();
    save_checkpoint(dir / "t.ckpt", hdr, ps, &opt);

    ParamSet ps2;
    ps2.add("m.a", Tensor({4, 3}));
    ps2.add("m.b", Tensor({7}));
    Adam opt2;
    CheckpointHeader back = load_checkpoint(dir / "t.ckpt", ps2, &opt2, 0xABCDu,
                                            canonical_palette().hash());
    EXPECT_EQ(back.module, "unit_test");
    EXPECT_EQ(back.step, 42u);
    EXPECT_EQ(ps2.find("m.a")->value.v, a.value.v);
    EXPECT_EQ(ps2.find("m.a")->adam_m.v, a.adam_m.v);
    EXPECT_EQ(ps2.find("m.b")->value.v, b.value.v);

    // hash mismatch is a hard error
    ParamSet ps3;
    ps3.add("m.a", Tensor({4, 3}));
    ps3.add("m.b", Tensor({7}));
    EXPECT_THROW(load_checkpoint(dir / "t.ckpt", ps3, nullptr, 0xDEADu), InvalidInput);
    // shape mismatch too
    ParamSet ps4;
    ps4.add("m.a", Tensor({4, 4}));
    ps4.add("m.b", Tensor({7}));
    EXPECT_THROW(load_checkpoint(dir / "t.ckpt", ps4), InvalidInput);
    std::filesystem::remove_all(dir);
}

TEST(EditSpecFile, ParsesAndValidates) {
    auto dir = temp_dir("segface_edits");
    {
        std::ofstream f(dir / "edits.txt");
        f << "# close the eyes for a stretch\n"
          << "blink EYE 20 16 30 48 frames 10 15\n"
          << "region_texture_swap HAIR 3\n"
          << "background_swap BACKGROUND 0\n";
    }
    auto edits = parse_edit_specs(dir / "edits.txt", canonical_palette());
    ASSERT_EQ(edits.size(), 3u);
    EXPECT_EQ(edits[0].spec.kind, EditKind::Blink);
    EXPECT_EQ(edits[0].spec.region_id, EYE);
    EXPECT_EQ(edits[0].from, 10);
    EXPECT_EQ(edits[0].to, 15);
    EXPECT_TRUE(edits[0].active(12));
    EXPECT_FALSE(edits[0].active(16));
    EXPECT_EQ(edits[1].spec.kind, EditKind::RegionTextureSwap);
    EXPECT_EQ(edits[1].spec.reference_frame, 3);
    {
        std::ofstream f(dir / "bad.txt");
        f << "blink NOSTRIL 0 0 4 4\n";
    }
    EXPECT_THROW(parse_edit_specs(dir / "bad.txt", canonical_palette()), InvalidInput);
    std::filesystem::remove_all(dir);
}
