// eval_metrics: PSNR, SSIM, landmark distances, Fréchet machinery and
// temporal statistics against closed forms and loop oracles.

#include <gtest/gtest.h>

#include "segface/metrics/frechet.hpp"
#include "segface/metrics/image.hpp"
#include "segface/metrics/landmarks.hpp"

using namespace segface;

namespace {
Tensor random_image(int h, int w, Rng& rng) {
    Tensor t({3, h, w});
    for (auto& v : t.v) v = rng.uniform();
    return t;
}
}  // namespace

TEST(Psnr, IdenticalImagesHitTheCap) {
    Rng rng(1);
    Tensor a = random_image(16, 16, rng);
    EXPECT_EQ(psnr(a, a), 100.0);
}

TEST(Psnr, UnitMseOn255Scale) {
    Tensor a({1, 2, 2}), b({1, 2, 2});
    for (int i = 0; i < 4; ++i) {
        a.v[static_cast<size_t>(i)] = 10.0f;
        b.v[static_cast<size_t>(i)] = 11.0f;  // MSE = 1
    }
    EXPECT_NEAR(psnr(a, b, 255.0), 48.1308, 1e-3);
}

TEST(Psnr, MatchesScalarOracleAndDecreasesWithMse) {
    Rng rng(2);
    Tensor a = random_image(8, 8, rng), b = random_image(8, 8, rng);
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(1.0 / mse), 1e-6);
    // strictly decreasing in MSE
    Tensor c = a;
    for (auto& v : c.v) v = std::clamp(v + 0.2f, 0.0f, 1.0f);
    Tensor d = a;
    for (auto& v : d.v) v = std::clamp(v + 0.4f, 0.0f, 1.0f);
    EXPECT_GT(psnr(a, c), psnr(a, d));
    EXPECT_THROW(psnr(a, Tensor({3, 4, 4})), InvalidInput);
}

TEST(Ssim, IdentityIsOne) {
    Rng rng(3);
    Tensor a = random_image(16, 16, rng);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
}

TEST(Ssim, AntiCorrelatedBinaryImageScoresNegative) {
    Tensor a({1, 16, 16}), b({1, 16, 16});
    Rng rng(4);
    for (int64_t i = 0; i < a.numel(); ++i) {
        a[i] = rng.coin() ? 1.0f : 0.0f;
        b[i] = 1.0f - a[i];
    }
    EXPECT_LT(ssim(a, b), 0.0);
}

TEST(Ssim, ConstantWindowsMatchClosedForm) {
    // constant c vs constant c+delta: SSIM = (2c(c+d)+C1)/(c^2+(c+d)^2+C1)
    const double c = 0.5, d = 0.1, c1 = 1e-4;
    Tensor a({1, 8, 8}), b({1, 8, 8});
    for (int64_t i = 0; i < a.numel(); ++i) {
        a[i] = static_cast<float>(c);
        b[i] = static_cast<float>(c + d);
    }
    double expect = (2 * c * (c + d) + c1) / (c * c + (c + d) * (c + d) + c1);
    EXPECT_NEAR(ssim(a, b), expect, 1e-5);
}

TEST(Ssim, RejectsTinyImages) {
    Tensor a({1, 4, 4});
    EXPECT_THROW(ssim(a, a), InvalidInput);
}

namespace {
SegmentationMap face_like_map(int shift_y = 0, int shift_x = 0) {
    SegmentationMap m(32, 32);
    for (auto& v : m.labels) v = SKIN;
    auto rect = [&](int y0, int x0, int y1, int x1, int32_t lab) {
        for (int i = y0 + shift_y; i <= y1 + shift_y; ++i)
            for (int j = x0 + shift_x; j <= x1 + shift_x; ++j) m.at(i, j) = lab;
    };
    rect(4, 6, 5, 12, BROW);
    rect(7, 6, 9, 12, EYE);
    rect(12, 14, 16, 18, NOSE);
    rect(20, 10, 21, 22, UPPER_LIP);
    rect(22, 12, 23, 20, INNER_MOUTH);
    rect(24, 10, 25, 22, LOWER_LIP);
    return m;
}
}  // namespace

TEST(Landmarks, IdenticalMasksGiveZero) {
    SegmentationMap m = face_like_map();
    EXPECT_EQ(landmark_distance(m, m, LandmarkScope::Face, 90.0), 0.0);
    EXPECT_EQ(landmark_distance(m, m, LandmarkScope::Mouth, 90.0), 0.0);
}

TEST(Landmarks, TranslationShiftsByitsNorm) {
    SegmentationMap gt = face_like_map();
    SegmentationMap pred = face_like_map(4, 3);  // shift (4,3): norm 5
    EXPECT_NEAR(landmark_distance(pred, gt, LandmarkScope::Face, 90.0), 5.0, 1e-9);
    EXPECT_NEAR(landmark_distance(pred, gt, LandmarkScope::Mouth, 90.0), 5.0, 1e-9);
}

TEST(Landmarks, MatchesIndependentExtremaOracle) {
    Rng rng(5);
    SegmentationMap pred = face_like_map(1, 0), gt = face_like_map();
    // independent oracle: recompute centroid + extrema by brute force
    auto oracle_points = [&](const SegmentationMap& m, int32_t region) {
        double sy = 0, sx = 0;
        int64_t n = 0;
        int ly = 0, lx = 1 << 20, ry = 0, rx = -1, ty = 1 << 20, tx = 0, by = -1, bx = 0;
        for (int i = 0; i < m.height; ++i)
            for (int j = 0; j < m.width; ++j) {
                if (m.at(i, j) != region) continue;
                sy += i;
                sx += j;
                ++n;
                if (j < lx || (j == lx && i < ly)) {
                    lx = j;
                    ly = i;
                }
                if (j > rx || (j == rx && i < ry)) {
                    rx = j;
                    ry = i;
                }
                if (i < ty || (i == ty && j < tx)) {
                    ty = i;
                    tx = j;
                }
                if (i > by || (i == by && j < bx)) {
                    by = i;
                    bx = j;
                }
            }
        return std::array<std::pair<double, double>, 5>{
            std::pair<double, double>{sy / n, sx / n}, {double(ly), double(lx)},
            {double(ry), double(rx)},                  {double(ty), double(tx)},
            {double(by), double(bx)}};
    };
    double total = 0;
    int count = 0;
    for (int32_t region : landmark_region_ids(LandmarkScope::Face)) {
        auto pp = oracle_points(pred, region), gp = oracle_points(gt, region);
        for (int k = 0; k < 5; ++k) {
            double dy = pp[static_cast<size_t>(k)].first - gp[static_cast<size_t>(k)].first;
            double dx = pp[static_cast<size_t>(k)].second - gp[static_cast<size_t>(k)].second;
            total += std::sqrt(dy * dy + dx * dx);
            ++count;
        }
    }
    EXPECT_NEAR(landmark_distance(pred, gt, LandmarkScope::Face, 90.0), total / count, 1e-9);
}

TEST(Landmarks, MissingRegionDrawsPenaltyAndEmptyGtThrows) {
    SegmentationMap gt = face_like_map();
    SegmentationMap pred = gt;
    for (auto& v : pred.labels)
        if (v == NOSE) v = SKIN;  // prediction lost the nose
    double with_penalty = landmark_distance(pred, gt, LandmarkScope::Face, 90.0);
    EXPECT_GT(with_penalty, 0.0);
    SegmentationMap empty(8, 8);  // all background: no scope regions
    EXPECT_THROW(landmark_distance(empty, empty, LandmarkScope::Mouth, 90.0), InvalidInput);
}

TEST(Frechet, IdenticalStatsGiveZero) {
    Rng rng(6);
    std::vector<std::vector<double>> e;
    for (int i = 0; i < 50; ++i) {
        std::vector<double> v(4);
        for (auto& x : v) x = rng.normal();
        e.push_back(v);
    }
    GaussianStats s = fit_gaussian(e);
    EXPECT_NEAR(frechet_distance(s, s), 0.0, 1e-6);
}

TEST(Frechet, EqualCovarianceReducesToMeanDistance) {
    GaussianStats p, q;
    p.mean = Eigen::VectorXd::Zero(3);
    q.mean = Eigen::VectorXd::Zero(3);
    q.mean << 1.0, 2.0, 2.0;  // ||d||^2 = 9
    p.cov = Eigen::MatrixXd::Identity(3, 3) * 0.7;
    q.cov = p.cov;
    EXPECT_NEAR(frechet_distance(p, q), 9.0, 1e-8);
}

TEST(Frechet, OneDimensionalClosedForm) {
    // mu 0 both, sigma^2 1 vs 4 -> (1-2)^2 = 1
    GaussianStats p, q;
    p.mean = Eigen::VectorXd::Zero(1);
    q.mean = Eigen::VectorXd::Zero(1);
    p.cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
    q.cov = Eigen::MatrixXd::Constant(1, 1, 4.0);
    EXPECT_NEAR(frechet_distance(p, q), 1.0, 1e-10);
}

TEST(Frechet, SymmetricNonNegativeOnRandomStats) {
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        auto sample = [&] {
            std::vector<std::vector<double>> e;
            for (int i = 0; i < 40; ++i) {
                std::vector<double> v(3);
                for (auto& x : v) x = rng.normal() * (1.0 + rep * 0.1);
                e.push_back(v);
            }
            return fit_gaussian(e);
        };
        GaussianStats p = sample(), q = sample();
        double pq = frechet_distance(p, q), qp = frechet_distance(q, p);
        EXPECT_NEAR(pq, qp, 1e-6 * (1.0 + pq));
        EXPECT_GE(pq, -1e-9);
    }
}

TEST(Frechet, DimensionMismatchThrows) {
    GaussianStats p, q;
    p.mean = Eigen::VectorXd::Zero(2);
    p.cov = Eigen::MatrixXd::Identity(2, 2);
    q.mean = Eigen::VectorXd::Zero(3);
    q.cov = Eigen::MatrixXd::Identity(3, 3);
    EXPECT_THROW(frechet_distance(p, q), InvalidInput);
}

TEST(Temporal, StaticAlternatingAndOracle) {
    Tensor black({3, 4, 4});
    Tensor white = Tensor::full({3, 4, 4}, 1.0f);
    TemporalStats st = temporal_consistency({black, black, black});
    EXPECT_EQ(st.mean_frame_diff, 0.0);
    EXPECT_EQ(st.max_frame_diff, 0.0);
    TemporalStats alt = temporal_consistency({black, white, black});
    EXPECT_EQ(alt.mean_frame_diff, 1.0);
    EXPECT_EQ(alt.max_frame_diff, 1.0);

    Rng rng(8);
    std::vector<Tensor> frames;
    for (int i = 0; i < 5; ++i) frames.push_back(random_image(4, 4, rng));
    TemporalStats r = temporal_consistency(frames);
    double mean = 0, mx = 0;
    for (size_t f = 1; f < frames.size(); ++f) {
        double d = 0;
        for (int64_t i = 0; i < frames[f].numel(); ++i)
            d += std::fabs(frames[f][i] - frames[f - 1][i]);
        d /= static_cast<double>(frames[f].numel());
        mean += d;
        mx = std::max(mx, d);
    }
    EXPECT_NEAR(r.mean_frame_diff, mean / 4.0, 1e-12);
    EXPECT_NEAR(r.max_frame_diff, mx, 1e-12);
    EXPECT_THROW(temporal_consistency({black}), InvalidInput);
}

TEST(Iou, MouthIouOnKnownOverlap) {
    SegmentationMap gt(4, 4), pred(4, 4);
    for (auto& v : gt.labels) v = SKIN;
    for (auto& v : pred.labels) v = SKIN;
    gt.at(1, 1) = UPPER_LIP;
    gt.at(1, 2) = UPPER_LIP;
    pred.at(1, 2) = UPPER_LIP;
    pred.at(1, 3) = UPPER_LIP;
    // UPPER_LIP: inter 1, union 3; other mouth classes absent from both
    EXPECT_NEAR(mouth_iou({pred}, {gt}), 1.0 / 3.0, 1e-12);
}
