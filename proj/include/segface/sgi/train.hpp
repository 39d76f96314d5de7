#pragma once

// SGI model bundle (encoder + generator + providers), the weighted loss,
// and the adversarial training loop with prior-mask learning.

#include "segface/harness/config.hpp"
#include "segface/metrics/image.hpp"
#include "segface/sgi/encoder.hpp"
#include "segface/sgi/generator.hpp"
#include "segface/sgi/providers.hpp"

namespace segface {

struct ClipFrames {
    std::vector<Tensor> images;  // (3,H,W) in [0,1]
    std::vector<SegmentationMap> masks;
    int identity = 0;
};

struct SGICorpus {
    std::vector<ClipFrames> train;
    std::vector<ClipFrames> test;
    int classes = 12;
    int num_identities = 0;
};

struct SGIWeights {
    float pixel = 1.0f;
    float perceptual = 0.8f;
    float id = 0.1f;
    float parsing = 1.0f;
    float adv = 0.02f;
};

struct SGILossReport {
    float pixel = 0.0f, perceptual = 0.0f, id = 0.0f, parsing = 0.0f, adversarial = 0.0f;
    float total = 0.0f;
};

class SGIModel {
public:
    SGIModel(int resolution, int classes, int style_dim = 512, int num_identities = 8,
             uint64_t seed = 5150)
        : encoder_(enc_ps_, EncoderConfig{resolution, classes, style_dim, 128, seed ^ 0xE}),
          generator_(gen_ps_, GeneratorConfig{resolution, classes, style_dim, 128, seed ^ 0x6}),
          disc_(disc_ps_, resolution, seed ^ 0xD),
          id_(id_ps_, resolution, num_identities, seed ^ 0x1D) {}

    StyleEncoder& encoder() { return encoder_; }
    const StyleEncoder& encoder() const { return encoder_; }
    MaskGuidedGenerator& generator() { return generator_; }
    const MaskGuidedGenerator& generator() const { return generator_; }
    Discriminator& disc() { return disc_; }
    const Discriminator& disc() const { return disc_; }
    IdentityEmbedder& id_embedder() { return id_; }
    const IdentityEmbedder& id_embedder() const { return id_; }

    std::vector<Param*> g_params() {
        auto v = enc_ps_.all();
        auto v2 = gen_ps_.all();
        v.insert(v.end(), v2.begin(), v2.end());
        return v;
    }
    std::vector<Param*> d_params() { return disc_ps_.all(); }
    std::vector<Param*> id_params() { return id_ps_.all(); }
    std::vector<ParamSet*> all_sets() { return {&enc_ps_, &gen_ps_, &disc_ps_, &id_ps_}; }
    void zero_all() {
        for (ParamSet* ps : all_sets()) ps->zero_grads();
    }

private:
    ParamSet enc_ps_, gen_ps_, disc_ps_, id_ps_;
    StyleEncoder encoder_;
    MaskGuidedGenerator generator_;
    Discriminator disc_;
    IdentityEmbedder id_;
};

// Weighted sum of pixel / perceptual / id / parsing / adversarial terms.
// Providers back three of the terms; a nonzero weight without its provider
// is a configuration error. `target` must be a non-differentiable input.
inline Node* sgi_loss(Graph& g, Node* output, Node* target, const IntGrid& target_labels,
                      const Tensor& region_colors, const Discriminator* disc,
                      const IdentityEmbedder* id_net, const SGIWeights& w,
                      SGILossReport* report = nullptr, float parser_tau = 25.0f) {
    if (!output->val.same_shape(target->val)) throw InvalidInput("sgi_loss: output/target shape mismatch");
    if (w.perceptual != 0.0f && !disc)
        throw InvalidInput("sgi_loss: perceptual weight set but no feature provider registered");
    if (w.adv != 0.0f && !disc)
        throw InvalidInput("sgi_loss: adversarial weight set but no discriminator registered");
    if (w.id != 0.0f && !id_net)
        throw InvalidInput("sgi_loss: id weight set but no identity embedder registered");

    SGILossReport rep;
    Node* total = nullptr;
    auto acc = [&](Node* term, float weight) {
        Node* scaled = scale(g, term, weight);
        total = total ? add(g, total, scaled) : scaled;
    };

    Node* pixel = l1_loss(g, output, target);
    rep.pixel = pixel->val[0];
    acc(pixel, w.pixel);

    std::vector<Node*> fake_taps, real_taps;
    Node* d_fake = nullptr;
    if (disc && (w.perceptual != 0.0f || w.adv != 0.0f)) {
        d_fake = disc->forward(g, output, &fake_taps, /*frozen=*/true);
        disc->forward(g, target, &real_taps, /*frozen=*/true);
    }
    if (w.perceptual != 0.0f) {
        Node* perc = nullptr;
        for (size_t i = 0; i < fake_taps.size(); ++i) {
            Node* t = l1_loss(g, fake_taps[i], real_taps[i]);
            perc = perc ? add(g, perc, t) : t;
        }
        perc = scale(g, perc, 1.0f / static_cast<float>(fake_taps.size()));
        rep.perceptual = perc->val[0];
        acc(perc, w.perceptual);
    }
    if (w.id != 0.0f) {
        Node* e_out = id_net->embed(g, output, /*frozen=*/true);
        Node* e_tgt = id_net->embed(g, target, /*frozen=*/true);
        Node* cos = cosine_rows(g, e_out, e_tgt);
        Node* id_term = mean_all(g, add_scalar(g, scale(g, cos, -1.0f), 1.0f));
        rep.id = id_term->val[0];
        acc(id_term, w.id);
    }
    if (w.parsing != 0.0f) {
        Node* logits = color_parser_logits(g, output, region_colors, parser_tau);
        Node* parse = cross_entropy(g, logits, target_labels);
        rep.parsing = parse->val[0];
        acc(parse, w.parsing);
    }
    if (w.adv != 0.0f) {
        Node* adv = mean_all(g, softplus(g, scale(g, d_fake, -1.0f)));  // non-saturating G loss
        rep.adversarial = adv->val[0];
        acc(adv, w.adv);
    }
    rep.total = total->val[0];
    if (report) *report = rep;
    return total;
}

struct SGITrainResult {
    SGILossReport last_report;
    double held_out_psnr = 0.0;
    int64_t steps = 0;
};

// Held-out self-reconstruction: codes from a frame, regenerate with its own
// mask, PSNR against the frame.
inline double sgi_reconstruction_psnr(const SGIModel& model, const std::vector<ClipFrames>& clips,
                                      int max_frames = 24) {
    double total = 0.0;
    int count = 0;
    for (const auto& clip : clips) {
        for (size_t f = 0; f < clip.images.size() && count < max_frames; f += 7) {
            StyleCodes codes = model.encoder().codes_for(clip.images[f], clip.masks[f]);
            Tensor out = model.generator().generate(clip.masks[f], codes);
            total += psnr(out, clip.images[f]);
            ++count;
        }
        if (count >= max_frames) break;
    }
    if (count == 0) throw InvalidInput("sgi_reconstruction_psnr: no frames");
    return total / count;
}

inline SGITrainResult train_sgi(SGIModel& model, const SGICorpus& corpus, const RunConfig& cfg,
                                const MetricsCallback& log = {}) {
    if (corpus.train.empty()) throw InvalidInput("train_sgi: empty corpus");
    Rng rng(static_cast<uint64_t>(cfg.get_int("seed")) ^ 0x534749ull);
    const int classes = corpus.classes;
    const int batch = static_cast<int>(cfg.get_int("sgi.batch"));
    const int64_t steps = cfg.get_int("sgi.steps");
    const bool prior = cfg.get_bool("sgi.prior_learning");
    const int prior_range = static_cast<int>(cfg.get_int("sgi.prior_range"));
    const bool prior_incl = cfg.get_bool("sgi.prior_include_target");
    SGIWeights w;
    w.pixel = static_cast<float>(cfg.get_float("sgi.w_pixel"));
    w.perceptual = static_cast<float>(cfg.get_float("sgi.w_perceptual"));
    w.id = static_cast<float>(cfg.get_float("sgi.w_id"));
    w.parsing = static_cast<float>(cfg.get_float("sgi.w_parsing"));
    w.adv = static_cast<float>(cfg.get_float("sgi.w_adv"));

    AdamConfig gac;
    gac.lr = static_cast<float>(cfg.get_float("sgi.lr"));
    gac.beta1 = static_cast<float>(cfg.get_float("sgi.beta1"));
    gac.beta2 = static_cast<float>(cfg.get_float("sgi.beta2"));
    Adam g_opt(gac);
    AdamConfig dac = gac;
    dac.weight_decay = static_cast<float>(cfg.get_float("sgi.d_weight_decay"));
    Adam d_opt(dac);
    AdamConfig iac;
    iac.lr = 2e-4f;
    Adam id_opt(iac);

    const int res = corpus.train[0].images[0].dim(1);
    const int64_t img_block = static_cast<int64_t>(3) * res * res;

    // Identity embedder pretraining (classification over synthetic
    // identities); frozen afterwards.
    const int64_t id_steps = cfg.get_int("sgi.id_pretrain_steps");
    for (int64_t step = 1; step <= id_steps; ++step) {
        const int ib = 16;
        Tensor imgs({ib, 3, res, res});
        IntGrid ids({ib, 1, 1});
        for (int i = 0; i < ib; ++i) {
            const auto& clip = corpus.train[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(corpus.train.size()) - 1))];
            int t = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(clip.images.size()) - 1));
            std::copy(clip.images[static_cast<size_t>(t)].v.begin(),
                      clip.images[static_cast<size_t>(t)].v.end(),
                      imgs.v.begin() + static_cast<int64_t>(i) * img_block);
            ids.v[static_cast<size_t>(i)] = clip.identity;
        }
        for (Param* p : model.id_params()) p->zero_grad();
        Graph g;
        Node* logits = model.id_embedder().classify(g, g.input(imgs));
        Node* loss = cross_entropy(g, reshape(g, logits, {ib, corpus.num_identities, 1, 1}), ids);
        if (!std::isfinite(loss->val[0])) throw Divergence("sgi: id embedder diverged");
        g.backward(loss);
        id_opt.step(model.id_params());
        if (log && step == id_steps) log("id_pretrain_loss", step, loss->val[0]);
    }

    SGITrainResult result;
    for (int64_t step = 1; step <= steps; ++step) {
        // assemble batch: codes come from frame t, structure from frame t'
        Tensor ref_imgs({batch, 3, res, res}), tgt_imgs({batch, 3, res, res});
        std::vector<SegmentationMap> ref_masks(static_cast<size_t>(batch)),
            tgt_masks(static_cast<size_t>(batch));
        IntGrid tgt_labels({batch, res, res});
        Tensor colors({batch, classes, 3});
        for (int i = 0; i < batch; ++i) {
            const auto& clip = corpus.train[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(corpus.train.size()) - 1))];
            int len = static_cast<int>(clip.images.size());
            int t = static_cast<int>(rng.uniform_int(0, len - 1));
            int tp = prior ? prior_mask_sample_index(len, t, rng, prior_range, prior_incl) : t;
            std::copy(clip.images[static_cast<size_t>(t)].v.begin(),
                      clip.images[static_cast<size_t>(t)].v.end(),
                      ref_imgs.v.begin() + static_cast<int64_t>(i) * img_block);
            std::copy(clip.images[static_cast<size_t>(tp)].v.begin(),
                      clip.images[static_cast<size_t>(tp)].v.end(),
                      tgt_imgs.v.begin() + static_cast<int64_t>(i) * img_block);
            ref_masks[static_cast<size_t>(i)] = clip.masks[static_cast<size_t>(t)];
            tgt_masks[static_cast<size_t>(i)] = clip.masks[static_cast<size_t>(tp)];
            std::copy(clip.masks[static_cast<size_t>(tp)].labels.begin(),
                      clip.masks[static_cast<size_t>(tp)].labels.end(),
                      tgt_labels.v.begin() + static_cast<int64_t>(i) * res * res);
            Tensor mu = region_mean_colors(clip.images[static_cast<size_t>(tp)],
                                           clip.masks[static_cast<size_t>(tp)], classes);
            std::copy(mu.v.begin(), mu.v.end(),
                      colors.v.begin() + static_cast<int64_t>(i) * classes * 3);
        }

        // generator step
        model.zero_all();
        Tensor fake_detached;
        SGILossReport rep;
        {
            Graph g;
            Node* codes = model.encoder().forward_codes(g, g.input(ref_imgs), ref_masks);
            Node* out = model.generator().forward(g, codes, tgt_masks);
            Node* target = g.input(tgt_imgs);
            Node* loss = sgi_loss(g, out, target, tgt_labels, colors, &model.disc(),
                                  &model.id_embedder(), w, &rep);
            if (!std::isfinite(rep.total))
                throw Divergence("sgi: non-finite generator loss at step " + std::to_string(step) +
                                 " (pixel=" + std::to_string(rep.pixel) +
                                 ", adv=" + std::to_string(rep.adversarial) + ")");
            g.backward(loss);
            g_opt.step(model.g_params());
            fake_detached = out->val;
        }

        // discriminator step
        if (w.adv != 0.0f) {
            model.zero_all();
            Graph g;
            Node* d_real = model.disc().forward(g, g.input(tgt_imgs));
            Node* d_fake = model.disc().forward(g, g.input(fake_detached));
            Node* loss = add(g, mean_all(g, softplus(g, scale(g, d_real, -1.0f))),
                             mean_all(g, softplus(g, d_fake)));
            if (!std::isfinite(loss->val[0]))
                throw Divergence("sgi: non-finite discriminator loss at step " + std::to_string(step));
            g.backward(loss);
            d_opt.step(model.d_params());
        }

        result.last_report = rep;
        result.steps = step;
        if (log && (step % 100 == 0 || step == 1)) {
            log("sgi_total", step, rep.total);
            log("sgi_pixel", step, rep.pixel);
        }
        if (step % cfg.get_int("sgi.eval_every") == 0 || step == steps) {
            const auto& clips = corpus.test.empty() ? corpus.train : corpus.test;
            result.held_out_psnr = sgi_reconstruction_psnr(model, clips);
            if (log) log("sgi_heldout_psnr", step, result.held_out_psnr);
        }
    }
    return result;
}

}  // namespace segface
