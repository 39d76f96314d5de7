#pragma once

// Contextual speech features over 3 s chunks. The production-scale setup
// plugs a frozen pretrained audio model in behind this interface; the desk
// provider is a small self-attention encoder over mel frames trained
// jointly with the segmentation generator. Both return 75 vectors per
// chunk (25 fps video, 3 s).

#include <memory>

#include "segface/audio/mel.hpp"
#include "segface/core/nn.hpp"

namespace segface {

constexpr int kChunkSeconds = 3;
constexpr int kChunkSamples = 48000;       // 3 s at 16 kHz
constexpr int kFramesPerChunk = 75;        // 25 fps
constexpr int kChunkMelFrames = 237;       // mel_frame_count(48000)

struct ContextFeatures {
    Tensor features;              // (75, D)
    std::vector<uint8_t> padded;  // per video frame: fell into zero-padded audio
};

class ContextualEmbeddingProvider {
public:
    virtual ~ContextualEmbeddingProvider() = default;
    virtual int dim() const = 0;
    // `chunk` holds at most 3 s of 16 kHz samples; shorter chunks are
    // zero-padded internally. Longer input is an error.
    virtual ContextFeatures features(const std::vector<float>& chunk) const = 0;
};

namespace detail {

inline std::vector<uint8_t> chunk_padded_flags(size_t real_samples) {
    std::vector<uint8_t> flags(kFramesPerChunk, 0);
    for (int t = 0; t < kFramesPerChunk; ++t)
        flags[static_cast<size_t>(t)] = static_cast<size_t>(t + 1) * 640 > real_samples ? 1 : 0;
    return flags;
}

inline std::vector<float> pad_chunk(const std::vector<float>& chunk) {
    if (chunk.size() > kChunkSamples)
        throw InvalidInput("context provider: chunk longer than 3 s");
    std::vector<float> padded = chunk;
    padded.resize(kChunkSamples, 0.0f);
    return padded;
}

// Mel row whose window represents video frame t (center of the 0.2 s slice).
inline int mel_row_for_frame(int t) {
    return std::min(round_half_up(t * kMelFramesPerVideoFrame) + kMelWindowFrames / 2,
                    kChunkMelFrames - 1);
}

}  // namespace detail

// Degenerate provider used to exercise interface substitutability: shapes
// and lengths of the real provider, all-zero values.
class ZeroContextProvider final : public ContextualEmbeddingProvider {
public:
    explicit ZeroContextProvider(int dim = 256) : dim_(dim) {}
    int dim() const override { return dim_; }
    ContextFeatures features(const std::vector<float>& chunk) const override {
        auto padded = detail::pad_chunk(chunk);
        ContextFeatures out;
        out.features = Tensor({kFramesPerChunk, dim_});
        out.padded = detail::chunk_padded_flags(chunk.size());
        return out;
    }

private:
    int dim_;
};

struct ContextProviderConfig {
    int dim = 256;        // D_ctx
    int embed_dim = 64;   // internal width
    int blocks = 2;       // attention blocks
    uint64_t seed = 11;
};

// Trainable desk-scale provider: per-row mel embedding + sinusoidal
// positions, a couple of single-head self-attention blocks, then a linear
// head read out at the mel rows aligned with each video frame.
class DeskContextProvider final : public ContextualEmbeddingProvider {
public:
    explicit DeskContextProvider(ContextProviderConfig cfg = {}) : cfg_(cfg) {
        Rng rng(cfg.seed);
        embed_ = Linear(params_, "ctx.embed", rng, 80, cfg.embed_dim);
        for (int b = 0; b < cfg.blocks; ++b) {
            std::string p = "ctx.block" + std::to_string(b);
            blocks_.push_back({Linear(params_, p + ".q", rng, cfg.embed_dim, cfg.embed_dim, 1.0f),
                               Linear(params_, p + ".k", rng, cfg.embed_dim, cfg.embed_dim, 1.0f),
                               Linear(params_, p + ".v", rng, cfg.embed_dim, cfg.embed_dim, 1.0f),
                               Linear(params_, p + ".o", rng, cfg.embed_dim, cfg.embed_dim, 0.5f),
                               Linear(params_, p + ".f1", rng, cfg.embed_dim, 2 * cfg.embed_dim),
                               Linear(params_, p + ".f2", rng, 2 * cfg.embed_dim, cfg.embed_dim, 0.5f)});
        }
        head_ = Linear(params_, "ctx.head", rng, cfg.embed_dim, cfg.dim, 1.0f);
        pos_ = Tensor({kChunkMelFrames, cfg.embed_dim});
        for (int t = 0; t < kChunkMelFrames; ++t)
            for (int d = 0; d < cfg.embed_dim; ++d) {
                double rate = std::pow(10000.0, -2.0 * (d / 2) / static_cast<double>(cfg.embed_dim));
                pos_.at(t, d) = static_cast<float>((d % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate));
            }
    }

    int dim() const override { return cfg_.dim; }
    ParamSet& params() { return params_; }
    const ContextProviderConfig& config() const { return cfg_; }

    // Differentiable path used during joint training. `chunk_mel` is the
    // (237, 80) mel block of one 3 s chunk.
    Node* forward_mel(Graph& g, const Tensor& chunk_mel, bool frozen = false) const {
        if (chunk_mel.rank() != 2 || chunk_mel.dim(0) != kChunkMelFrames || chunk_mel.dim(1) != 80)
            throw InvalidInput("context provider: (237,80) chunk mel expected, got " +
                               chunk_mel.shape_str());
        auto lin = [&](const Linear& l, Node* x) { return frozen ? l.frozen(g, x) : l(g, x); };
        Node* x = lin(embed_, g.input(chunk_mel));
        x = add(g, x, g.input(pos_));
        const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(cfg_.embed_dim));
        for (const auto& blk : blocks_) {
            Node* q = lin(blk.q, x);
            Node* k = lin(blk.k, x);
            Node* v = lin(blk.v, x);
            Node* att = softmax_rows(g, scale(g, matmul(g, q, k, false, true), inv_sqrt_d));
            Node* ctx = lin(blk.o, matmul(g, att, v));
            x = add(g, x, ctx);
            Node* ff = lin(blk.f2, leaky_relu(g, lin(blk.f1, x)));
            x = add(g, x, ff);
        }
        std::vector<int> rows(kFramesPerChunk);
        for (int t = 0; t < kFramesPerChunk; ++t) rows[static_cast<size_t>(t)] = detail::mel_row_for_frame(t);
        return lin(head_, select_rows(g, x, rows));
    }

    ContextFeatures features(const std::vector<float>& chunk) const override {
        auto padded_wave = detail::pad_chunk(chunk);
        MelSpectrogram mel = compute_mel(padded_wave, 16000);
        Graph g;
        Node* out = forward_mel(g, mel.frames, /*frozen=*/true);
        ContextFeatures cf;
        cf.features = out->val;
        cf.padded = detail::chunk_padded_flags(chunk.size());
        return cf;
    }

private:
    struct Block {
        Linear q, k, v, o, f1, f2;
    };
    ContextProviderConfig cfg_;
    mutable ParamSet params_;
    Linear embed_, head_;
    std::vector<Block> blocks_;
    Tensor pos_;
};

// Slice the (237,80) mel block of chunk `k` out of a full-clip mel,
// padding missing rows with the log floor.
inline Tensor chunk_mel_block(const MelSpectrogram& mel, int chunk_idx) {
    Tensor block({kChunkMelFrames, 80});
    const float floor_val = std::log(mel.config.log_floor);
    const int base = chunk_idx * 240;  // 3 s of mel rows at 12.5 ms hop
    for (int r = 0; r < kChunkMelFrames; ++r) {
        int src = base + r;
        for (int m = 0; m < 80; ++m)
            block.at(r, m) = src < mel.num_frames() ? mel.frames.at(src, m) : floor_val;
    }
    return block;
}

}  // namespace segface
