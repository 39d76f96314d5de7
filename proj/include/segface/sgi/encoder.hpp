#pragma once

// Mask-guided multi-scale encoder: a small backbone with FPN-style
// top-down fusion produces three feature maps at strides {8,16,32};
// per-region average pooling against the downsampled mask and a shared MLP
// turn them into per-region style codes. Regions absent at a scale take a
// learned per-(region,scale) default embedding.

#include "segface/core/nn.hpp"
#include "segface/sgi/styles.hpp"

namespace segface {

struct EncoderConfig {
    int resolution = 64;
    int classes = 12;
    int style_dim = 512;
    int pyramid_dim = 128;
    uint64_t seed = 33;
};

struct PyramidScales {
    // strides are fixed by contract; sizes derive from the input resolution
    static constexpr int strides[3] = {8, 16, 32};
};

class StyleEncoder {
public:
    explicit StyleEncoder(ParamSet& ps, EncoderConfig cfg = {}) : cfg_(cfg), ps_(ps) {
        if (cfg.resolution % 32 != 0)
            throw InvalidInput("encoder: resolution must be divisible by 32");
        layers_ = style_layer_count(cfg.resolution);
        Rng rng(cfg.seed);
        backbone_ = {Conv2d(ps, "enc.b0", rng, 3, 32, 3, 1),
                     Conv2d(ps, "enc.b1", rng, 32, 48, 3, 2),
                     Conv2d(ps, "enc.b2", rng, 48, 64, 3, 2),
                     Conv2d(ps, "enc.b3", rng, 64, 96, 3, 2),
                     Conv2d(ps, "enc.b4", rng, 96, 128, 3, 2),
                     Conv2d(ps, "enc.b5", rng, 128, 160, 3, 2)};
        norms_ = {InstanceNorm(ps, "enc.n0", 32),  InstanceNorm(ps, "enc.n1", 48),
                  InstanceNorm(ps, "enc.n2", 64),  InstanceNorm(ps, "enc.n3", 96),
                  InstanceNorm(ps, "enc.n4", 128), InstanceNorm(ps, "enc.n5", 160)};
        const int pd = cfg.pyramid_dim;
        lateral_ = {Conv2d(ps, "enc.l1", rng, 96, pd, 1, 1, 0, 1.0f),
                    Conv2d(ps, "enc.l2", rng, 128, pd, 1, 1, 0, 1.0f),
                    Conv2d(ps, "enc.l3", rng, 160, pd, 1, 1, 0, 1.0f)};
        for (int s = 0; s < 3; ++s)
            defaults_.push_back(&ps.add("enc.default" + std::to_string(s),
                                        kaiming_uniform(rng, {cfg.classes, pd}, pd, 0.3f)));
        mlp0_ = Linear(ps, "enc.mlp0", rng, 3 * pd, cfg.style_dim);
        mlp1_ = Linear(ps, "enc.mlp1", rng, cfg.style_dim, cfg.style_dim);
        mlp2_ = Linear(ps, "enc.mlp2", rng, cfg.style_dim, layers_ * cfg.style_dim, 1.0f);
    }

    const EncoderConfig& config() const { return cfg_; }
    int style_layers() const { return layers_; }

    // Three maps at strides {8,16,32}; deterministic in eval mode.
    std::array<Node*, 3> encode_multiscale(Graph& g, Node* image, bool frozen = false) const {
        if (image->val.dim(2) != cfg_.resolution || image->val.dim(3) != cfg_.resolution)
            throw InvalidInput("encoder: input resolution " + image->val.shape_str() +
                               " does not match configured " + std::to_string(cfg_.resolution));
        auto cv = [&](const Conv2d& c, Node* x) { return frozen ? c.frozen(g, x) : c(g, x); };
        auto nm = [&](const InstanceNorm& n, Node* x) { return frozen ? n.frozen(g, x) : n(g, x); };
        Node* x = image;
        std::array<Node*, 3> taps{};  // strides 8, 16, 32
        for (size_t i = 0; i < backbone_.size(); ++i) {
            x = leaky_relu(g, nm(norms_[i], cv(backbone_[i], x)));
            if (i == 3) taps[0] = x;
            if (i == 4) taps[1] = x;
            if (i == 5) taps[2] = x;
        }
        Node* p3 = cv(lateral_[2], taps[2]);
        Node* p2 = add(g, cv(lateral_[1], taps[1]), upsample_nearest2x(g, p3));
        Node* p1 = add(g, cv(lateral_[0], taps[0]), upsample_nearest2x(g, p2));
        return {p1, p2, p3};
    }

    // (N*C, 3*pyramid_dim) pooled multi-scale region features; absent
    // regions filled from learned defaults (and flagged via `present`).
    Node* pool_regions(Graph& g, const std::array<Node*, 3>& pyramid,
                       const std::vector<SegmentationMap>& masks,
                       std::array<std::vector<uint8_t>, 3>* present_out = nullptr,
                       bool frozen = false) const {
        const int n = pyramid[0]->val.dim(0);
        if (static_cast<int>(masks.size()) != n)
            throw InvalidInput("pool_regions: one mask per batch item required");
        std::vector<Node*> per_scale;
        for (int s = 0; s < 3; ++s) {
            int res = cfg_.resolution / PyramidScales::strides[s];
            IntGrid labels({n, res, res});
            for (int b = 0; b < n; ++b) {
                SegmentationMap ds = downsample(masks[static_cast<size_t>(b)], res, res);
                std::copy(ds.labels.begin(), ds.labels.end(),
                          labels.v.begin() + static_cast<int64_t>(b) * res * res);
            }
            std::vector<uint8_t> present;
            Node* pooled = region_mean_pool(g, pyramid[static_cast<size_t>(s)], labels,
                                            cfg_.classes, &present);
            Node* defaults = frozen ? g.frozen(*defaults_[static_cast<size_t>(s)])
                                    : g.param(*defaults_[static_cast<size_t>(s)]);
            per_scale.push_back(rows_or_default(g, pooled, defaults, present, cfg_.classes));
            if (present_out) (*present_out)[static_cast<size_t>(s)] = std::move(present);
        }
        return concat_cols(g, per_scale);
    }

    // Shared-weight MLP: (N*C, 3*pd) -> (N*C, L*D). The same weights serve
    // every region, so regions with identical pooled features get identical
    // codes.
    Node* style_mlp(Graph& g, Node* region_features, bool frozen = false) const {
        auto lin = [&](const Linear& l, Node* x) { return frozen ? l.frozen(g, x) : l(g, x); };
        Node* x = leaky_relu(g, lin(mlp0_, region_features));
        x = leaky_relu(g, lin(mlp1_, x));
        return lin(mlp2_, x);
    }

    // Full path image+mask -> codes node (N*C, L*D).
    Node* forward_codes(Graph& g, Node* images, const std::vector<SegmentationMap>& masks,
                        bool frozen = false) const {
        auto pyr = encode_multiscale(g, images, frozen);
        Node* feats = pool_regions(g, pyr, masks, nullptr, frozen);
        return style_mlp(g, feats, frozen);
    }

    // Inference convenience for a single image.
    StyleCodes codes_for(const Tensor& image, const SegmentationMap& mask) const {
        Graph g;
        Tensor batch({1, 3, image.dim(1), image.dim(2)}, image.v);
        Node* codes = forward_codes(g, g.input(batch), {mask}, /*frozen=*/true);
        StyleCodes out;
        out.s = Tensor({cfg_.classes, layers_, cfg_.style_dim}, codes->val.v);
        return out;
    }

private:
    EncoderConfig cfg_;
    ParamSet& ps_;
    int layers_ = 0;
    std::vector<Conv2d> backbone_, lateral_;
    std::vector<InstanceNorm> norms_;
    std::vector<Param*> defaults_;
    Linear mlp0_, mlp1_, mlp2_;
};

}  // namespace segface
