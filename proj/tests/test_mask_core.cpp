// mask_core: palette merging, one-hot codecs, class weights, occlusion,
// downsampling and mask edits, each against an independent per-pixel oracle.

#include <gtest/gtest.h>

#include "segface/mask/mask.hpp"
#include "segface/mask/mask_io.hpp"

using namespace segface;

namespace {
SegmentationMap random_map(int h, int w, int classes, Rng& rng) {
    SegmentationMap m(h, w);
    for (auto& v : m.labels) v = static_cast<int32_t>(rng.uniform_int(0, classes - 1));
    return m;
}
}  // namespace

TEST(Palette, LeftRightEyesMergeToOneClass) {
    ClassPalette p = canonical_palette();
    SegmentationMap raw(1, 2);
    raw.at(0, 0) = 4;  // left eye
    raw.at(0, 1) = 5;  // right eye
    SegmentationMap merged = merge_classes(raw, p);
    EXPECT_EQ(merged.at(0, 0), EYE);
    EXPECT_EQ(merged.at(0, 1), EYE);
}

TEST(Palette, AllBackgroundIsIdentity) {
    ClassPalette p = canonical_palette();
    SegmentationMap raw(4, 4);  // all zeros = raw background
    SegmentationMap merged = merge_classes(raw, p);
    for (auto v : merged.labels) EXPECT_EQ(v, BACKGROUND);
}

TEST(Palette, CoversAllRawIdsOntoTwelve) {
    ClassPalette p = canonical_palette();
    ASSERT_EQ(p.num_classes(), 12);
    ASSERT_EQ(static_cast<int>(p.merge_table.size()), kNumRawClasses);
    // synthetic map covering all raw ids -> exactly 12 distinct outputs,
    // oracle = plain per-pixel double loop over the merge table
    SegmentationMap raw(1, kNumRawClasses);
    for (int j = 0; j < kNumRawClasses; ++j) raw.at(0, j) = j;
    SegmentationMap merged = merge_classes(raw, p);
    std::set<int32_t> distinct;
    for (int j = 0; j < kNumRawClasses; ++j) {
        EXPECT_EQ(merged.at(0, j), p.merge_table[static_cast<size_t>(j)]);
        distinct.insert(merged.at(0, j));
    }
    EXPECT_EQ(distinct.size(), 12u);
    // idempotence on canonical ids: merge restricted to [0,12) is identity
    for (int c = 0; c < 12; ++c) EXPECT_EQ(p.merge(p.merge(c)), p.merge(c));
}

TEST(Palette, RejectsOutOfRangeRawValue) {
    ClassPalette p = canonical_palette();
    SegmentationMap raw(1, 1);
    raw.at(0, 0) = 19;
    EXPECT_THROW(merge_classes(raw, p), InvalidInput);
    try {
        merge_classes(raw, p);
    } catch (const InvalidInput& e) {
        EXPECT_NE(std::string(e.what()).find("19"), std::string::npos);
    }
}

TEST(OneHot, SmallExampleExact) {
    SegmentationMap m(2, 2);
    m.at(0, 0) = 0;
    m.at(0, 1) = 1;
    m.at(1, 0) = 2;
    m.at(1, 1) = 0;
    OneHotMask oh = one_hot(m, 3);
    float c0[] = {1, 0, 0, 1}, c1[] = {0, 1, 0, 0}, c2[] = {0, 0, 1, 0};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            EXPECT_EQ(oh.at(0, i, j), c0[i * 2 + j]);
            EXPECT_EQ(oh.at(1, i, j), c1[i * 2 + j]);
            EXPECT_EQ(oh.at(2, i, j), c2[i * 2 + j]);
        }
}

TEST(OneHot, UniformMapHasOneHotChannel) {
    SegmentationMap m(3, 3);
    for (auto& v : m.labels) v = 2;
    OneHotMask oh = one_hot(m, 4);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int c = 0; c < 4; ++c) EXPECT_EQ(oh.at(c, i, j), c == 2 ? 1.0f : 0.0f);
}

TEST(OneHot, RoundTripOnRandomMaps) {
    Rng rng(42);
    for (int rep = 0; rep < 20; ++rep) {
        SegmentationMap m = random_map(16, 16, 12, rng);
        OneHotMask oh = one_hot(m, 12);
        // channel sums are exactly one per pixel
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j) {
                float s = 0.0f;
                for (int c = 0; c < 12; ++c) s += oh.at(c, i, j);
                ASSERT_EQ(s, 1.0f);
            }
        EXPECT_TRUE(decode_argmax(oh) == m);
    }
}

TEST(OneHot, RejectsLabelOutOfRange) {
    SegmentationMap m(1, 1);
    m.at(0, 0) = 5;
    EXPECT_THROW(one_hot(m, 5), InvalidInput);
}

TEST(ClassWeights, ToyFractionsMatchHandComputation) {
    // fractions (0.5, 0.25, 0.25) -> inverses (2,4,4) -> normalized (0.6,1.2,1.2)
    SegmentationMap m(2, 2);
    m.at(0, 0) = 0;
    m.at(0, 1) = 0;
    m.at(1, 0) = 1;
    m.at(1, 1) = 2;
    RegionWeights w = compute_class_weights({m}, 3);
    EXPECT_NEAR(w.w[0], 0.6f, 1e-4f);
    EXPECT_NEAR(w.w[1], 1.2f, 1e-4f);
    EXPECT_NEAR(w.w[2], 1.2f, 1e-4f);
}

TEST(ClassWeights, UniformAreasGiveExactOnes) {
    SegmentationMap m(2, 2);
    m.at(0, 0) = 0;
    m.at(0, 1) = 1;
    m.at(1, 0) = 2;
    m.at(1, 1) = 3;
    RegionWeights w = compute_class_weights({m}, 4);
    for (float x : w.w) EXPECT_EQ(x, 1.0f);
}

TEST(ClassWeights, AbsentClassHitsClipCeiling) {
    SegmentationMap m(2, 2);  // all class 0; class 1 absent
    RegionWeights w = compute_class_weights({m}, 2);
    EXPECT_EQ(w.w[1], 10.0f);
    EXPECT_EQ(w.w[0], 0.1f);  // the huge inverse pushes the present class to the floor
}

TEST(ClassWeights, RejectsEmptyCorpus) {
    EXPECT_THROW(compute_class_weights({}, 3), InvalidInput);
}

TEST(Occlude, ZeroesExactlyLowerRows) {
    Rng rng(7);
    for (int h : {2, 4, 7}) {
        SegmentationMap m = random_map(h, 4, 3, rng);
        OneHotMask oh = one_hot(m, 3);
        OneHotMask occ = occlude_lower_half(oh);
        int zeroed = 0;
        for (int i = 0; i < h; ++i) {
            float s = 0.0f;
            for (int c = 0; c < 3; ++c)
                for (int j = 0; j < 4; ++j) s += occ.at(c, i, j);
            if (i >= h / 2) {
                EXPECT_EQ(s, 0.0f);
                ++zeroed;
            } else {
                EXPECT_GT(s, 0.0f);
            }
        }
        EXPECT_EQ(zeroed, h - h / 2);
        // idempotent
        OneHotMask twice = occlude_lower_half(occ);
        EXPECT_EQ(twice.data, occ.data);
    }
}

TEST(Downsample, BlockConstantAndIdentity) {
    SegmentationMap m(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) m.at(i, j) = (i / 2) * 2 + (j / 2);
    SegmentationMap d = downsample(m, 2, 2);
    EXPECT_EQ(d.at(0, 0), 0);
    EXPECT_EQ(d.at(0, 1), 1);
    EXPECT_EQ(d.at(1, 0), 2);
    EXPECT_EQ(d.at(1, 1), 3);
    EXPECT_TRUE(downsample(m, 4, 4) == m);
}

TEST(Downsample, MatchesStrideOracleAndPreservesLabelSet) {
    Rng rng(9);
    SegmentationMap m = random_map(8, 8, 5, rng);
    SegmentationMap d = downsample(m, 4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) EXPECT_EQ(d.at(i, j), m.at(i * 2, j * 2));
    std::set<int32_t> src(m.labels.begin(), m.labels.end());
    for (auto v : d.labels) EXPECT_TRUE(src.count(v));
}

TEST(Downsample, RejectsNonDivisibleTarget) {
    SegmentationMap m(8, 8);
    EXPECT_THROW(downsample(m, 3, 3), InvalidInput);
}

TEST(ApplyEdit, BlinkRewritesEyesUnderStencil) {
    SegmentationMap m(8, 8);
    for (auto& v : m.labels) v = SKIN;
    m.at(2, 2) = EYE;
    m.at(2, 5) = EYE;
    EditSpec spec;
    spec.kind = EditKind::Blink;
    spec.region_id = EYE;
    spec.stencil = {1, 1, 4, 7};
    SegmentationMap out = apply_edit(m, spec, 12);
    EXPECT_EQ(count_label(out, EYE), 0);
    EXPECT_EQ(out.at(2, 2), SKIN);
    EXPECT_EQ(count_label(out, SKIN), count_label(m, SKIN) + 2);
}

TEST(ApplyEdit, EmptyStencilAndNoEyesAreIdentity) {
    SegmentationMap m(4, 4);
    for (auto& v : m.labels) v = SKIN;
    EditSpec spec;
    spec.kind = EditKind::Blink;
    spec.region_id = EYE;
    spec.stencil = {0, 0, 0, 0};  // empty
    EXPECT_TRUE(apply_edit(m, spec, 12) == m);
    spec.stencil = {1, 1, 3, 3};  // no EYE pixels anywhere
    EXPECT_TRUE(apply_edit(m, spec, 12) == m);
}

TEST(ApplyEdit, SwapKindsLeaveMapUnchanged) {
    Rng rng(3);
    SegmentationMap m = random_map(6, 6, 12, rng);
    EditSpec spec;
    spec.kind = EditKind::RegionTextureSwap;
    spec.region_id = HAIR;
    EXPECT_TRUE(apply_edit(m, spec, 12) == m);
    spec.kind = EditKind::BackgroundSwap;
    spec.region_id = BACKGROUND;
    EXPECT_TRUE(apply_edit(m, spec, 12) == m);
}

TEST(ApplyEdit, RejectsUnknownRegion) {
    SegmentationMap m(4, 4);
    EditSpec spec;
    spec.kind = EditKind::Blink;
    spec.region_id = 99;
    EXPECT_THROW(apply_edit(m, spec, 12), InvalidInput);
}

TEST(MaskIo, PgmRoundTripAndPaletteManifest) {
    Rng rng(11);
    SegmentationMap m = random_map(16, 12, 12, rng);
    auto dir = std::filesystem::temp_directory_path() / "segface_maskio_test";
    std::filesystem::create_directories(dir);
    write_pgm(dir / frame_name("mask_", 3, "pgm"), m);
    SegmentationMap back = read_pgm(dir / "mask_000003.pgm");
    EXPECT_TRUE(back == m);

    ClassPalette p = canonical_palette();
    write_palette_manifest(dir / "palette.txt", p);
    ClassPalette q = read_palette_manifest(dir / "palette.txt");
    EXPECT_EQ(q.labels, p.labels);
    EXPECT_EQ(q.merge_table, p.merge_table);
    EXPECT_EQ(q.hash(), p.hash());
    std::filesystem::remove_all(dir);
}
