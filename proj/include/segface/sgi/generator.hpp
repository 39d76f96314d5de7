#pragma once

// Mask-guided style-modulated generator. A learned 4x4 constant grows to
// the target resolution through styled conv / transposed-conv layers; the
// modulation vector at every spatial site is read from the style map (the
// per-pixel gather of that layer's region codes over the downsampled
// mask), so editing one region's codes cannot reach pixels outside that
// region's receptive neighbourhood. RGB leaves through per-resolution skip
// taps summed StyleGAN2-style; no noise inputs, so generation is a pure
// function of (mask, codes).
//
// The layer table below is the single source of truth for both the forward
// pass and the influence-map computation the locality tests rely on.

#include "segface/core/nn.hpp"
#include "segface/sgi/styles.hpp"

namespace segface {

struct GeneratorConfig {
    int resolution = 64;
    int classes = 12;
    int style_dim = 512;
    int base_width = 128;  // channels at 4x4, halved per doubling, floor 32
    uint64_t seed = 55;

    int channels_for(int res) const {
        int level = 0, r = res;
        while (r > 4) {
            r >>= 1;
            ++level;
        }
        return std::max(32, base_width >> level);
    }
};

class MaskGuidedGenerator {
public:
    struct LayerDesc {
        enum Kind { Conv3, Up4 } kind;
        int res_in = 4;   // input resolution (output is res_in or 2*res_in)
        int in_ch = 0, out_ch = 0;
        int style_index = -1;
        int res_out() const { return kind == Up4 ? 2 * res_in : res_in; }
    };

    explicit MaskGuidedGenerator(ParamSet& ps, GeneratorConfig cfg = {}) : cfg_(cfg) {
        if (cfg.resolution < 8 || (cfg.resolution & (cfg.resolution - 1)) != 0)
            throw InvalidInput("generator: resolution must be a power of two >= 8");
        layers_total_ = style_layer_count(cfg.resolution);
        Rng rng(cfg.seed);
        const_input_ = &ps.add("gen.const", kaiming_uniform(rng, {1, cfg.channels_for(4), 4, 4},
                                                            cfg.channels_for(4), 1.0f));
        int style = 0;
        auto add_conv = [&](int res, int cin, int cout) {
            descs_.push_back({LayerDesc::Conv3, res, cin, cout, style});
            std::string nm = "gen.m" + std::to_string(descs_.size() - 1);
            convs_.push_back(Conv2d(ps, nm, rng, cin, cout, 3, 1));
            affines_.push_back(Linear(ps, nm + ".aff", rng, cfg.style_dim, cin, 0.3f));
            ++style;
        };
        auto add_up = [&](int res, int cin, int cout) {
            descs_.push_back({LayerDesc::Up4, res, cin, cout, style});
            std::string nm = "gen.m" + std::to_string(descs_.size() - 1);
            ups_.push_back(ConvT2d(ps, nm, rng, cin, cout, 4, 2, 1));
            affines_.push_back(Linear(ps, nm + ".aff", rng, cfg.style_dim, cin, 0.3f));
            ++style;
        };

        add_conv(4, cfg.channels_for(4), cfg.channels_for(4));
        for (int res = 4; res < cfg.resolution; res *= 2) {
            add_up(res, cfg.channels_for(res), cfg.channels_for(2 * res));
            add_conv(2 * res, cfg.channels_for(2 * res), cfg.channels_for(2 * res));
        }
        // unstyled intermediate RGB taps; the final tap is styled
        for (int res = 4; res < cfg.resolution; res *= 2)
            to_rgb_.push_back(Conv2d(ps, "gen.rgb" + std::to_string(res), rng,
                                     cfg.channels_for(res), 3, 1, 1, 0, 1.0f));
        final_rgb_ = Conv2d(ps, "gen.rgb_out", rng, cfg.channels_for(cfg.resolution), 3, 1, 1, 0, 1.0f);
        final_affine_ = Linear(ps, "gen.rgb_out.aff", rng, cfg.style_dim,
                               cfg.channels_for(cfg.resolution), 0.3f);
        final_style_index_ = style;
        if (style + 1 != layers_total_)
            throw InvalidInput("generator: layer table does not match style layer count");
    }

    const GeneratorConfig& config() const { return cfg_; }
    int style_layers() const { return layers_total_; }
    const std::vector<LayerDesc>& layer_table() const { return descs_; }

    // codes: (N*C, L*D) node. masks: one per batch item at full resolution.
    Node* forward(Graph& g, Node* codes, const std::vector<SegmentationMap>& masks,
                  bool frozen = false) const {
        const int n = static_cast<int>(masks.size());
        if (codes->val.dim(0) != n * cfg_.classes ||
            codes->val.dim(1) != layers_total_ * cfg_.style_dim)
            throw InvalidInput("generator: codes shape " + codes->val.shape_str() +
                               " does not match (N*C, L*D)");
        for (const auto& m : masks)
            if (m.height != cfg_.resolution || m.width != cfg_.resolution)
                throw InvalidInput("generator: mask resolution mismatch");

        std::map<int, IntGrid> labels;
        for (int res = 4; res <= cfg_.resolution; res *= 2) {
            IntGrid grid({n, res, res});
            for (int b = 0; b < n; ++b) {
                SegmentationMap ds = downsample(masks[static_cast<size_t>(b)], res, res);
                for (auto lab : ds.labels)
                    if (lab < 0 || lab >= cfg_.classes)
                        throw InvalidInput("generator: mask label out of range");
                std::copy(ds.labels.begin(), ds.labels.end(),
                          grid.v.begin() + static_cast<int64_t>(b) * res * res);
            }
            labels.emplace(res, std::move(grid));
        }

        auto modulate = [&](Node* x, const Linear& affine, int style_idx, int res) {
            Node* s_l = slice_cols(g, codes, style_idx * cfg_.style_dim,
                                   (style_idx + 1) * cfg_.style_dim);
            Node* gains = add_scalar(g, frozen ? affine.frozen(g, s_l) : affine(g, s_l), 1.0f);
            Node* gmap = gather_region_rows(g, gains, labels.at(res), cfg_.classes, res, res);
            return mul(g, x, gmap);
        };

        Node* x = tile_batch(g, frozen ? g.frozen(*const_input_) : g.param(*const_input_), n);
        Node* rgb = nullptr;
        size_t ci = 0, ui = 0, ri = 0;
        for (const auto& d : descs_) {
            x = modulate(x, affines_[static_cast<size_t>(d.style_index)], d.style_index, d.res_in);
            if (d.kind == LayerDesc::Conv3) {
                const auto& c = convs_[ci++];
                x = frozen ? c.frozen(g, x) : c(g, x);
            } else {
                const auto& u = ups_[ui++];
                x = frozen ? u.frozen(g, x) : u(g, x);
            }
            x = leaky_relu(g, x);
            const bool tap_here = d.kind == LayerDesc::Conv3;
            if (tap_here && d.res_in < cfg_.resolution) {
                const auto& t = to_rgb_[ri++];
                Node* tap = frozen ? t.frozen(g, x) : t(g, x);
                rgb = rgb ? add(g, upsample_nearest2x(g, rgb), tap) : tap;
            } else if (tap_here && d.res_in == cfg_.resolution) {
                Node* xm = modulate(x, final_affine_, final_style_index_, cfg_.resolution);
                Node* tap = frozen ? final_rgb_.frozen(g, xm) : final_rgb_(g, xm);
                rgb = add(g, upsample_nearest2x(g, rgb), tap);
            }
        }
        return sigmoid(g, rgb);
    }

    // Single-sample inference.
    Tensor generate(const SegmentationMap& mask, const StyleCodes& codes) const {
        if (codes.classes() != cfg_.classes || codes.layers() != layers_total_ ||
            codes.dim() != cfg_.style_dim)
            throw InvalidInput("generate: style code grid " + codes.s.shape_str() +
                               " does not match generator config");
        Graph g;
        Tensor flat({cfg_.classes, layers_total_ * cfg_.style_dim}, codes.s.v);
        Node* out = forward(g, g.input(flat), {mask}, /*frozen=*/true);
        return Tensor({3, cfg_.resolution, cfg_.resolution}, out->val.v);
    }

    // Exact reachable set of a change to region `region_id`'s codes,
    // propagated through the layer table: styled layers inject the region's
    // (downsampled) pixels, Conv3 dilates by 1, Up4 spreads an input pixel
    // to output offsets [-1, 2], RGB taps accumulate through nearest-up.
    // Pixels outside this set are bitwise-unaffected by the edit.
    std::vector<uint8_t> influence_map(const SegmentationMap& mask, int region_id) const {
        auto region_pixels = [&](int res) {
            SegmentationMap ds = downsample(mask, res, res);
            std::vector<uint8_t> grid(static_cast<size_t>(res) * res, 0);
            for (size_t i = 0; i < ds.labels.size(); ++i)
                grid[i] = ds.labels[i] == region_id ? 1 : 0;
            return grid;
        };
        auto dilate1 = [](const std::vector<uint8_t>& in, int res) {
            std::vector<uint8_t> out(in.size(), 0);
            for (int i = 0; i < res; ++i)
                for (int j = 0; j < res; ++j) {
                    if (!in[static_cast<size_t>(i) * res + j]) continue;
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj) {
                            int ii = i + di, jj = j + dj;
                            if (ii >= 0 && ii < res && jj >= 0 && jj < res)
                                out[static_cast<size_t>(ii) * res + jj] = 1;
                        }
                }
            return out;
        };
        auto upspread = [](const std::vector<uint8_t>& in, int res) {
            int r2 = 2 * res;
            std::vector<uint8_t> out(static_cast<size_t>(r2) * r2, 0);
            for (int i = 0; i < res; ++i)
                for (int j = 0; j < res; ++j) {
                    if (!in[static_cast<size_t>(i) * res + j]) continue;
                    for (int di = -1; di <= 2; ++di)
                        for (int dj = -1; dj <= 2; ++dj) {
                            int ii = 2 * i + di, jj = 2 * j + dj;
                            if (ii >= 0 && ii < r2 && jj >= 0 && jj < r2)
                                out[static_cast<size_t>(ii) * r2 + jj] = 1;
                        }
                }
            return out;
        };
        auto upnearest = [](const std::vector<uint8_t>& in, int res) {
            int r2 = 2 * res;
            std::vector<uint8_t> out(static_cast<size_t>(r2) * r2, 0);
            for (int i = 0; i < res; ++i)
                for (int j = 0; j < res; ++j)
                    if (in[static_cast<size_t>(i) * res + j])
                        for (int di = 0; di <= 1; ++di)
                            for (int dj = 0; dj <= 1; ++dj)
                                out[static_cast<size_t>(2 * i + di) * r2 + 2 * j + dj] = 1;
            return out;
        };
        auto merge = [](std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
            for (size_t i = 0; i < a.size(); ++i) a[i] = a[i] || b[i] ? 1 : 0;
        };

        std::vector<uint8_t> active(16, 0);  // 4x4
        std::vector<uint8_t> rgb;            // starts at first tap
        int rgb_res = 0;
        int res = 4;
        for (const auto& d : descs_) {
            merge(active, region_pixels(d.res_in));  // styled gain on the layer input
            if (d.kind == LayerDesc::Conv3) {
                active = dilate1(active, res);
            } else {
                active = upspread(active, res);
                res *= 2;
            }
            if (d.kind == LayerDesc::Conv3) {
                std::vector<uint8_t> tap = active;
                if (d.res_in == cfg_.resolution) merge(tap, region_pixels(cfg_.resolution));
                if (rgb.empty()) {
                    rgb = tap;
                    rgb_res = res;
                } else {
                    while (rgb_res < res) {
                        rgb = upnearest(rgb, rgb_res);
                        rgb_res *= 2;
                    }
                    merge(rgb, tap);
                }
            }
        }
        return rgb;
    }

private:
    GeneratorConfig cfg_;
    int layers_total_ = 0;
    int final_style_index_ = 0;
    Param* const_input_ = nullptr;
    std::vector<LayerDesc> descs_;
    std::vector<Conv2d> convs_, to_rgb_;
    std::vector<ConvT2d> ups_;
    std::vector<Linear> affines_;
    Conv2d final_rgb_;
    Linear final_affine_;
};

}  // namespace segface
