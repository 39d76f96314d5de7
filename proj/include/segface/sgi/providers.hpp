#pragma once

// Desk-scale provider stand-ins for the pretrained networks the losses
// expect: a conv discriminator (adversarial term + its features double as
// the perceptual distance), a small identity embedder trained with a
// classification head, and an analytic nearest-region-color parser that
// exactly inverts the synthetic renderer.

#include "segface/core/nn.hpp"
#include "segface/mask/mask.hpp"

namespace segface {

class Discriminator {
public:
    Discriminator(ParamSet& ps, int resolution, uint64_t seed = 77) : resolution_(resolution) {
        Rng rng(seed);
        convs_ = {Conv2d(ps, "disc.c0", rng, 3, 48, 3, 2),
                  Conv2d(ps, "disc.c1", rng, 48, 96, 3, 2),
                  Conv2d(ps, "disc.c2", rng, 96, 144, 3, 2),
                  Conv2d(ps, "disc.c3", rng, 144, 192, 3, 2),
                  Conv2d(ps, "disc.c4", rng, 192, 192, 3, 1)};
        const int feat = resolution / 16;
        fc_ = Linear(ps, "disc.fc", rng, 192 * feat * feat, 1, 1.0f);
    }

    // Returns per-sample scores (N,1). `taps` collects the activations used
    // as the perceptual feature space.
    Node* forward(Graph& g, Node* x, std::vector<Node*>* taps = nullptr,
                  bool frozen = false) const {
        if (x->val.dim(2) != resolution_ || x->val.dim(3) != resolution_)
            throw InvalidInput("discriminator: input resolution mismatch");
        for (size_t i = 0; i < convs_.size(); ++i) {
            x = frozen ? convs_[i].frozen(g, x) : convs_[i](g, x);
            x = leaky_relu(g, x);
            if (taps && i < 3) taps->push_back(x);
        }
        const int feat = resolution_ / 16;
        Node* flat = reshape(g, x, {x->val.dim(0), 192 * feat * feat});
        return frozen ? fc_.frozen(g, flat) : fc_(g, flat);
    }

private:
    int resolution_;
    std::vector<Conv2d> convs_;
    Linear fc_;
};

class IdentityEmbedder {
public:
    IdentityEmbedder(ParamSet& ps, int resolution, int num_identities, uint64_t seed = 99)
        : resolution_(resolution) {
        Rng rng(seed);
        convs_ = {Conv2d(ps, "id.c0", rng, 3, 32, 3, 2), Conv2d(ps, "id.c1", rng, 32, 64, 3, 2),
                  Conv2d(ps, "id.c2", rng, 64, 96, 3, 2), Conv2d(ps, "id.c3", rng, 96, 128, 3, 2)};
        norms_ = {InstanceNorm(ps, "id.n0", 32), InstanceNorm(ps, "id.n1", 64),
                  InstanceNorm(ps, "id.n2", 96), InstanceNorm(ps, "id.n3", 128)};
        proj_ = Linear(ps, "id.proj", rng, 128, 64, 1.0f);
        head_ = Linear(ps, "id.head", rng, 64, num_identities, 1.0f);
    }

    Node* embed(Graph& g, Node* x, bool frozen = false) const {
        if (x->val.dim(2) != resolution_ || x->val.dim(3) != resolution_)
            throw InvalidInput("identity embedder: input resolution mismatch");
        for (size_t i = 0; i < convs_.size(); ++i) {
            x = frozen ? convs_[i].frozen(g, x) : convs_[i](g, x);
            x = frozen ? norms_[i].frozen(g, x) : norms_[i](g, x);
            x = leaky_relu(g, x);
        }
        Node* pooled = global_avg_pool(g, x);
        return frozen ? proj_.frozen(g, pooled) : proj_(g, pooled);
    }

    Node* classify(Graph& g, Node* x) const { return head_(g, leaky_relu(g, embed(g, x))); }

private:
    int resolution_;
    std::vector<Conv2d> convs_;
    std::vector<InstanceNorm> norms_;
    Linear proj_, head_;
};

// Mean color of every region present in the mask; absent regions get a far
// sentinel so their parser logit vanishes.
inline Tensor region_mean_colors(const Tensor& image, const SegmentationMap& mask, int classes) {
    if (image.rank() != 3 || image.dim(0) != 3) throw InvalidInput("region_mean_colors: (3,H,W) image expected");
    Tensor colors({classes, 3});
    std::vector<int64_t> counts(static_cast<size_t>(classes), 0);
    const int64_t plane = static_cast<int64_t>(mask.height) * mask.width;
    for (int64_t p = 0; p < plane; ++p) {
        int32_t lab = mask.labels[static_cast<size_t>(p)];
        ++counts[static_cast<size_t>(lab)];
        for (int k = 0; k < 3; ++k) colors.at(lab, k) += image.v[static_cast<size_t>(k * plane + p)];
    }
    for (int c = 0; c < classes; ++c) {
        if (counts[static_cast<size_t>(c)] > 0)
            for (int k = 0; k < 3; ++k) colors.at(c, k) /= static_cast<float>(counts[static_cast<size_t>(c)]);
        else
            for (int k = 0; k < 3; ++k) colors.at(c, k) = 1e3f;
    }
    return colors;
}

// Soft nearest-color parser: logit_c(pixel) = -tau * ||pixel - mu_c||^2.
// Differentiable w.r.t. the image; argmax recovers the exact class on
// renderer-produced frames.
inline Node* color_parser_logits(Graph& g, Node* images, const Tensor& colors, float tau = 25.0f) {
    int n = images->val.dim(0), h = images->val.dim(2), w = images->val.dim(3);
    if (images->val.dim(1) != 3) throw InvalidInput("color_parser_logits: RGB input expected");
    if (colors.rank() != 3 || colors.dim(0) != n || colors.dim(2) != 3)
        throw InvalidInput("color_parser_logits: per-sample (N,C,3) colors expected");
    const int classes = colors.dim(1);
    const int64_t plane = static_cast<int64_t>(h) * w;
    Node* out = g.alloc();
    out->val = Tensor({n, classes, h, w});
    for (int b = 0; b < n; ++b)
        for (int c = 0; c < classes; ++c)
            for (int64_t p = 0; p < plane; ++p) {
                float d2 = 0.0f;
                for (int k = 0; k < 3; ++k) {
                    float diff = images->val[(static_cast<int64_t>(b) * 3 + k) * plane + p] -
                                 colors.at(b, c, k);
                    d2 += diff * diff;
                }
                out->val[(static_cast<int64_t>(b) * classes + c) * plane + p] = -tau * d2;
            }
    out->need_grad = images->need_grad;
    if (out->need_grad) {
        auto cols = std::make_shared<Tensor>(colors);
        out->back = [out, images, cols, n, classes, plane, tau] {
            Tensor& gx = images->g();
            for (int b = 0; b < n; ++b)
                for (int c = 0; c < classes; ++c)
                    for (int64_t p = 0; p < plane; ++p) {
                        float go = out->grad[(static_cast<int64_t>(b) * classes + c) * plane + p];
                        if (go == 0.0f) continue;
                        for (int k = 0; k < 3; ++k) {
                            float diff = images->val[(static_cast<int64_t>(b) * 3 + k) * plane + p] -
                                         cols->at(b, c, k);
                            gx[(static_cast<int64_t>(b) * 3 + k) * plane + p] += go * (-2.0f * tau * diff);
                        }
                    }
        };
    }
    return out;
}

}  // namespace segface
