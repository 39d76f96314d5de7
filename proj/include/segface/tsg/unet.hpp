#pragma once

// Talking segmentation generator: a U-Net over the channel-concatenated
// mask pair (occluded pose source + full identity reference), with the
// fused speech embedding broadcast and concatenated at the bottleneck.
// Skip connections on the way down, transposed-conv upsampling on the way
// up, per-pixel class logits out.

#include "segface/audio/context.hpp"
#include "segface/core/nn.hpp"
#include "segface/mask/mask.hpp"

namespace segface {

struct TSGConfig {
    int classes = 12;
    int resolution = 64;
    int base_width = 32;
    int depth = 4;
    int d_local = 256;
    int d_ctx = 256;
    int ctx_embed_dim = 64;
    int ctx_blocks = 2;
    bool label_regression = false;  // 1-channel L1-on-labels ablation head
    uint64_t seed = 21;
};

struct TSGLossReport {
    float wce = 0.0f;
    float sync = 0.0f;
    float total = 0.0f;
};

class TSGModel {
public:
    explicit TSGModel(TSGConfig cfg = {}) : cfg_(cfg) {
        const int down = 1 << cfg.depth;
        if (cfg.resolution % down != 0 || cfg.resolution / down < 4)
            throw InvalidInput("tsg: resolution " + std::to_string(cfg.resolution) +
                               " is not a multiple of 2^depth with a >=4 bottleneck");
        Rng rng(cfg.seed);
        const int b = cfg.base_width;
        const int in_ch = 2 * cfg.classes;
        ch_ = {b, 2 * b, 4 * b, 8 * b, 8 * b};
        ch_.resize(static_cast<size_t>(cfg.depth) + 1);

        stem_ = Conv2d(params_, "tsg.stem", rng, in_ch, ch_[0], 3, 1);
        stem_norm_ = InstanceNorm(params_, "tsg.stem_n", ch_[0]);
        for (int i = 0; i < cfg.depth; ++i) {
            std::string p = "tsg.down" + std::to_string(i);
            down_a_.push_back(Conv2d(params_, p + "a", rng, ch_[static_cast<size_t>(i)],
                                     ch_[static_cast<size_t>(i) + 1], 3, 2));
            down_b_.push_back(Conv2d(params_, p + "b", rng, ch_[static_cast<size_t>(i) + 1],
                                     ch_[static_cast<size_t>(i) + 1], 3, 1));
            down_na_.push_back(InstanceNorm(params_, p + "na", ch_[static_cast<size_t>(i) + 1]));
            down_nb_.push_back(InstanceNorm(params_, p + "nb", ch_[static_cast<size_t>(i) + 1]));
        }
        const int cb = ch_.back();
        speech_fc_ = Linear(params_, "tsg.speech_fc", rng, cfg.d_local + cfg.d_ctx, cb / 2, 1.0f);
        bott_ = Conv2d(params_, "tsg.bott", rng, cb + cb / 2, cb, 3, 1);
        bott_norm_ = InstanceNorm(params_, "tsg.bott_n", cb);
        for (int i = cfg.depth - 1; i >= 0; --i) {
            std::string p = "tsg.up" + std::to_string(i);
            up_t_.push_back(ConvT2d(params_, p + "t", rng, ch_[static_cast<size_t>(i) + 1],
                                    ch_[static_cast<size_t>(i)], 4, 2, 1));
            up_c_.push_back(Conv2d(params_, p + "c", rng, 2 * ch_[static_cast<size_t>(i)],
                                   ch_[static_cast<size_t>(i)], 3, 1));
            up_nt_.push_back(InstanceNorm(params_, p + "nt", ch_[static_cast<size_t>(i)]));
            up_nc_.push_back(InstanceNorm(params_, p + "nc", ch_[static_cast<size_t>(i)]));
        }
        head_ = Conv2d(params_, "tsg.head", rng, ch_[0], cfg.label_regression ? 1 : cfg.classes,
                       1, 1, 0, 1.0f);

        // speech path: small conv tower over the 0.2 s mel window
        local_convs_ = {Conv2d(params_, "tsg.loc0", rng, 1, 32, 3, 2),
                        Conv2d(params_, "tsg.loc1", rng, 32, 64, 3, 2),
                        Conv2d(params_, "tsg.loc2", rng, 64, 96, 3, 2),
                        Conv2d(params_, "tsg.loc3", rng, 96, 128, 3, 2)};
        local_norms_ = {InstanceNorm(params_, "tsg.locn0", 32), InstanceNorm(params_, "tsg.locn1", 64),
                        InstanceNorm(params_, "tsg.locn2", 96), InstanceNorm(params_, "tsg.locn3", 128)};
        local_proj_ = Linear(params_, "tsg.loc_proj", rng, 128, cfg.d_local, 1.0f);

        ContextProviderConfig pc;
        pc.dim = cfg.d_ctx;
        pc.embed_dim = cfg.ctx_embed_dim;
        pc.blocks = cfg.ctx_blocks;
        pc.seed = rng.fork();
        provider_ = std::make_unique<DeskContextProvider>(pc);
    }

    const TSGConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    DeskContextProvider& provider() { return *provider_; }
    const DeskContextProvider& provider() const { return *provider_; }

    std::vector<Param*> all_params() {
        auto v = params_.all();
        auto pv = provider_->params().all();
        v.insert(v.end(), pv.begin(), pv.end());
        return v;
    }

    // local speech tower: (N,1,16,80) -> (N, d_local)
    Node* embed_local(Graph& g, Node* x, bool frozen = false) const {
        for (size_t i = 0; i < local_convs_.size(); ++i) {
            x = frozen ? local_convs_[i].frozen(g, x) : local_convs_[i](g, x);
            x = frozen ? local_norms_[i].frozen(g, x) : local_norms_[i](g, x);
            x = leaky_relu(g, x);
        }
        Node* pooled = global_avg_pool(g, x);
        return frozen ? local_proj_.frozen(g, pooled) : local_proj_(g, pooled);
    }

    // masks: (N, 2C, H, W) pose-source ++ identity-reference one-hot,
    // speech: (N, d_local + d_ctx). Returns (N, C, H, W) logits (or a
    // single channel in label-regression mode).
    Node* forward(Graph& g, Node* masks, Node* speech, bool frozen = false) const {
        if (masks->val.dim(1) != 2 * cfg_.classes)
            throw InvalidInput("tsg: expected " + std::to_string(2 * cfg_.classes) +
                               " input channels, got " + std::to_string(masks->val.dim(1)));
        if (masks->val.dim(2) != cfg_.resolution || masks->val.dim(3) != cfg_.resolution)
            throw InvalidInput("tsg: input resolution " + masks->val.shape_str() +
                               " does not match configured " + std::to_string(cfg_.resolution));
        auto cv = [&](const Conv2d& c, Node* x) { return frozen ? c.frozen(g, x) : c(g, x); };
        auto nm = [&](const InstanceNorm& n, Node* x) { return frozen ? n.frozen(g, x) : n(g, x); };

        std::vector<Node*> skips;
        Node* x = leaky_relu(g, nm(stem_norm_, cv(stem_, masks)));
        skips.push_back(x);
        for (int i = 0; i < cfg_.depth; ++i) {
            x = leaky_relu(g, nm(down_na_[static_cast<size_t>(i)], cv(down_a_[static_cast<size_t>(i)], x)));
            x = leaky_relu(g, nm(down_nb_[static_cast<size_t>(i)], cv(down_b_[static_cast<size_t>(i)], x)));
            if (i + 1 < cfg_.depth) skips.push_back(x);
        }
        // speech injection: broadcast over the bottleneck grid and fuse
        Node* sp = frozen ? speech_fc_.frozen(g, speech) : speech_fc_(g, speech);
        sp = leaky_relu(g, sp);
        int bres = cfg_.resolution >> cfg_.depth;
        x = concat_channels(g, {x, broadcast_spatial(g, sp, bres, bres)});
        x = leaky_relu(g, nm(bott_norm_, cv(bott_, x)));

        for (int i = 0; i < cfg_.depth; ++i) {
            const auto& tc = up_t_[static_cast<size_t>(i)];
            Node* up = frozen ? tc.frozen(g, x) : tc(g, x);
            up = leaky_relu(g, nm(up_nt_[static_cast<size_t>(i)], up));
            Node* skip = skips[skips.size() - 1 - static_cast<size_t>(i)];
            x = concat_channels(g, {up, skip});
            x = leaky_relu(g, nm(up_nc_[static_cast<size_t>(i)], cv(up_c_[static_cast<size_t>(i)], x)));
        }
        return cv(head_, x);
    }

private:
    TSGConfig cfg_;
    mutable ParamSet params_;
    std::vector<int> ch_;
    Conv2d stem_, bott_, head_;
    InstanceNorm stem_norm_, bott_norm_;
    std::vector<Conv2d> down_a_, down_b_, up_c_;
    std::vector<ConvT2d> up_t_;
    std::vector<InstanceNorm> down_na_, down_nb_, up_nt_, up_nc_;
    std::vector<Conv2d> local_convs_;
    std::vector<InstanceNorm> local_norms_;
    Linear local_proj_, speech_fc_;
    std::unique_ptr<DeskContextProvider> provider_;
};

// Plain and weighted cross entropy as standalone values (oracle-friendly
// wrappers over the graph op). The published loss omits the negation; the
// implemented loss is the standard negative log-likelihood, so it is >= 0
// and 0 exactly in the one-hot-correct limit.
inline float ce_loss_value(const Tensor& logits, const IntGrid& targets) {
    Graph g;
    return cross_entropy(g, g.input(logits), targets)->val[0];
}

inline float weighted_ce_loss_value(const Tensor& logits, const IntGrid& targets,
                                    const RegionWeights& weights) {
    Graph g;
    return cross_entropy(g, g.input(logits), targets, weights.w)->val[0];
}

// Pose source ++ identity reference input tensor for a batch of one.
inline Tensor tsg_input_tensor(const SegmentationMap& pose_gt, const SegmentationMap& identity_ref,
                               int classes) {
    OneHotMask pose = occlude_lower_half(one_hot(pose_gt, classes));
    OneHotMask ident = one_hot(identity_ref, classes);
    Tensor out({1, 2 * classes, pose.height, pose.width});
    std::copy(pose.data.begin(), pose.data.end(), out.v.begin());
    std::copy(ident.data.begin(), ident.data.end(),
              out.v.begin() + static_cast<int64_t>(classes) * pose.height * pose.width);
    return out;
}

}  // namespace segface
