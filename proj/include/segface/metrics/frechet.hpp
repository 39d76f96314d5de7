#pragma once

// Fréchet distance between Gaussian fits of embedding sets, with the
// matrix square root taken by eigendecomposition. Embedding networks are
// pluggable; the built-in embedder is a downsampled-grayscale stand-in, so
// absolute values are not comparable with published scores — only
// orderings are meaningful.

#include <Eigen/Dense>
#include <functional>

#include "segface/metrics/image.hpp"

namespace segface {

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // symmetric PSD, unbiased (n-1) normalization
};

inline GaussianStats fit_gaussian(const std::vector<std::vector<double>>& embeddings) {
    if (embeddings.size() < 2) throw InvalidInput("fit_gaussian: at least two embeddings required");
    const int n = static_cast<int>(embeddings.size());
    const int d = static_cast<int>(embeddings[0].size());
    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(embeddings[static_cast<size_t>(i)].size()) != d)
            throw InvalidInput("fit_gaussian: ragged embedding set");
        for (int j = 0; j < d; ++j) x(i, j) = embeddings[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
    GaussianStats st;
    st.mean = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - st.mean.transpose();
    st.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    return st;
}

namespace detail {
// PSD square root by symmetric eigendecomposition. Eigenvalues in
// [-neg_tol, 0) clip to zero; anything lower is a hard error.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double neg_tol = 1e-8) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) {
        if (ev(i) < -neg_tol)
            throw InvalidInput("frechet_distance: covariance not PSD (eigenvalue " +
                               std::to_string(ev(i)) + ")");
        ev(i) = std::sqrt(std::max(ev(i), 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace detail

// ||mu_p - mu_q||^2 + tr(Sp + Sq - 2 (Sp Sq)^{1/2})
inline double frechet_distance(const GaussianStats& p, const GaussianStats& q) {
    if (p.mean.size() != q.mean.size())
        throw InvalidInput("frechet_distance: dimension mismatch (" + std::to_string(p.mean.size()) +
                           " vs " + std::to_string(q.mean.size()) + ")");
    Eigen::MatrixXd sp = detail::psd_sqrt(p.cov);
    // tr((Sp Sq)^{1/2}) computed through the symmetric form sqrt(Sp) Sq sqrt(Sp)
    Eigen::MatrixXd inner = sp * q.cov * sp;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
    double tr_sqrt = 0.0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        double ev = es.eigenvalues()(i);
        if (ev < -1e-8)
            throw InvalidInput("frechet_distance: product matrix not PSD within tolerance");
        tr_sqrt += std::sqrt(std::max(ev, 0.0));
    }
    double mean_term = (p.mean - q.mean).squaredNorm();
    return mean_term + p.cov.trace() + q.cov.trace() - 2.0 * tr_sqrt;
}

// Pluggable frame embedder for FID/FVD-style scores.
using FrameEmbedder = std::function<std::vector<double>(const Tensor& frame)>;

// Default desk embedder: 8x8 grayscale average-pool, flattened.
inline FrameEmbedder downsample_embedder(int grid = 8) {
    return [grid](const Tensor& frame) {
        Tensor gray = detail::to_gray(frame);
        int h = gray.dim(0), w = gray.dim(1);
        std::vector<double> out(static_cast<size_t>(grid) * grid, 0.0);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                out[static_cast<size_t>(std::min(i * grid / h, grid - 1)) * grid +
                    std::min(j * grid / w, grid - 1)] += gray.at(i, j);
        double cell = static_cast<double>(h) * w / (grid * grid);
        for (auto& v : out) v /= cell;
        return out;
    };
}

inline GaussianStats embed_and_fit(const std::vector<Tensor>& frames, const FrameEmbedder& embed) {
    std::vector<std::vector<double>> e;
    e.reserve(frames.size());
    for (const auto& f : frames) e.push_back(embed(f));
    return fit_gaussian(e);
}

}  // namespace segface
