#pragma once

// End-to-end orchestration: prepare -> train-syncnet -> train-tsg (two
// phases) -> train-sgi -> infer -> eval, with stage-level resume (a stage
// whose checkpoint matches the current config hash is reused, anything
// else is retrained from scratch) and a consolidated JSON report. Metrics
// stream to a JSON-lines log, one record per event.

#include <iostream>

#include "segface/core/serialize.hpp"
#include "segface/harness/corpus.hpp"
#include "segface/metrics/frechet.hpp"
#include "segface/metrics/landmarks.hpp"
#include "segface/metrics/sync_score.hpp"
#include "segface/tsg/train.hpp"

namespace segface {

class MetricsLog {
public:
    MetricsLog() = default;
    explicit MetricsLog(const std::filesystem::path& path, uint64_t config_hash)
        : config_hash_(config_hash) {
        f_.open(path, std::ios::app);
        if (!f_) throw IoError("cannot open metrics log " + path.string());
    }
    void record(const std::string& module, const std::string& event, int64_t step, double value) {
        if (!f_.is_open()) return;
        nlohmann::json j;
        j["module"] = module;
        j["event"] = event;
        j["step"] = step;
        j["value"] = value;
        j["config_hash"] = hex64(config_hash_);
        f_ << j.dump() << "\n";
        f_.flush();
    }
    MetricsCallback callback(const std::string& module) {
        return [this, module](const std::string& event, int64_t step, double value) {
            record(module, event, step, value);
        };
    }

private:
    std::ofstream f_;
    uint64_t config_hash_ = 0;
};

namespace detail {

inline SyncExpertConfig sync_expert_config(const RunConfig& cfg) {
    SyncExpertConfig sc;
    sc.classes = static_cast<int>(cfg.get_int("classes"));
    sc.height = static_cast<int>(cfg.get_int("resolution"));
    sc.width = sc.height;
    sc.base_width = static_cast<int>(cfg.get_int("sync.base_width"));
    sc.seed = static_cast<uint64_t>(cfg.get_int("seed")) ^ 0x5Eull;
    return sc;
}

inline TSGConfig tsg_config(const RunConfig& cfg) {
    TSGConfig tc;
    tc.classes = static_cast<int>(cfg.get_int("classes"));
    tc.resolution = static_cast<int>(cfg.get_int("resolution"));
    tc.base_width = static_cast<int>(cfg.get_int("tsg.base_width"));
    tc.depth = static_cast<int>(cfg.get_int("tsg.depth"));
    tc.d_local = static_cast<int>(cfg.get_int("audio.d_local"));
    tc.d_ctx = static_cast<int>(cfg.get_int("audio.d_ctx"));
    tc.ctx_embed_dim = static_cast<int>(cfg.get_int("audio.ctx_embed_dim"));
    tc.ctx_blocks = static_cast<int>(cfg.get_int("audio.ctx_blocks"));
    tc.label_regression = cfg.get_str("tsg.loss") == "l1-labels";
    tc.seed = static_cast<uint64_t>(cfg.get_int("seed")) ^ 0x26ull;
    return tc;
}

// Reuse a stage checkpoint only when it was produced under this exact
// config (and palette).
inline bool stage_reusable(const std::filesystem::path& ckpt, uint64_t config_hash,
                           uint64_t palette_hash) {
    if (!std::filesystem::exists(ckpt)) return false;
    try {
        CheckpointHeader hdr = peek_checkpoint(ckpt);
        return hdr.config_hash == config_hash && hdr.palette_hash == palette_hash;
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace detail

struct PipelineResult {
    nlohmann::json report;
};

inline nlohmann::json evaluate_generated(const LoadedCorpus& corpus, const SyncExpert& expert,
                                         const std::filesystem::path& infer_dir,
                                         double lmd_penalty) {
    nlohmann::json out;
    double iou_sum = 0, upper_sum = 0, sync_sum = 0, psnr_sum = 0, ssim_sum = 0;
    double flmd_sum = 0, mlmd_sum = 0, tdiff_sum = 0, mouth_smooth_sum = 0;
    int clips = 0;
    std::vector<Tensor> all_real, all_fake;
    for (const auto* clip : corpus.split("test")) {
        std::filesystem::path cdir = infer_dir / clip->name;
        if (!std::filesystem::exists(cdir / "done")) continue;
        int frames = static_cast<int>(clip->masks.size());
        std::vector<SegmentationMap> gen_masks;
        std::vector<Tensor> gen_frames;
        for (int t = 0; t < frames; ++t) {
            gen_masks.push_back(read_pgm(cdir / frame_name("mask_", t, "pgm")));
            gen_frames.push_back(read_ppm(cdir / frame_name("frame_", t, "ppm")));
        }
        iou_sum += mouth_iou(gen_masks, clip->masks);
        upper_sum += upper_half_agreement(gen_masks, clip->masks);
        sync_sum += sync_confidence(gen_masks, clip->mel, expert);
        double fl = 0, ml = 0, ps = 0, ss = 0;
        for (int t = 0; t < frames; ++t) {
            fl += landmark_distance(gen_masks[static_cast<size_t>(t)],
                                    clip->masks[static_cast<size_t>(t)], LandmarkScope::Face,
                                    lmd_penalty);
            ml += landmark_distance(gen_masks[static_cast<size_t>(t)],
                                    clip->masks[static_cast<size_t>(t)], LandmarkScope::Mouth,
                                    lmd_penalty);
            ps += psnr(gen_frames[static_cast<size_t>(t)], clip->images[static_cast<size_t>(t)]);
            ss += ssim(gen_frames[static_cast<size_t>(t)], clip->images[static_cast<size_t>(t)]);
        }
        flmd_sum += fl / frames;
        mlmd_sum += ml / frames;
        psnr_sum += ps / frames;
        ssim_sum += ss / frames;
        TemporalStats ts = temporal_consistency(gen_frames, &gen_masks);
        tdiff_sum += ts.mean_frame_diff;
        mouth_smooth_sum += ts.mouth_area_smoothness;
        for (int t = 0; t < frames; t += 3) {
            all_real.push_back(clip->images[static_cast<size_t>(t)]);
            all_fake.push_back(gen_frames[static_cast<size_t>(t)]);
        }
        ++clips;
    }
    if (clips == 0) throw InvalidInput("evaluate_generated: no completed inference directories");
    FrameEmbedder embed = downsample_embedder();
    double fd = frechet_distance(embed_and_fit(all_real, embed), embed_and_fit(all_fake, embed));
    out["mouth_iou"] = iou_sum / clips;
    out["upper_agreement"] = upper_sum / clips;
    out["sync_confidence"] = sync_sum / clips;
    out["psnr"] = psnr_sum / clips;
    out["ssim"] = ssim_sum / clips;
    out["flmd"] = flmd_sum / clips;
    out["mlmd"] = mlmd_sum / clips;
    out["frechet"] = fd;
    out["temporal_mean_diff"] = tdiff_sum / clips;
    out["mouth_area_smoothness"] = mouth_smooth_sum / clips;
    return out;
}

inline PipelineResult run_pipeline(const RunConfig& cfg, const std::filesystem::path& work_dir,
                                   bool quiet = false) {
    std::error_code ec;
    std::filesystem::create_directories(work_dir, ec);
    if (ec) throw IoError("cannot create work directory " + work_dir.string());
    const uint64_t config_hash = cfg.hash();
    const ClassPalette palette = canonical_palette();
    const uint64_t palette_hash = palette.hash();
    MetricsLog mlog(work_dir / "metrics.jsonl", config_hash);
    auto say = [&](const std::string& s) {
        if (!quiet) std::cout << "[pipeline] " << s << std::endl;
    };

    nlohmann::json report;
    report["config_hash"] = hex64(config_hash);
    report["palette_hash"] = hex64(palette_hash);
    report["config"] = cfg.canonical();

    // ---- stage: prepare-data
    std::filesystem::path corpus_dir = work_dir / "corpus";
    bool regen = true;
    if (std::filesystem::exists(corpus_dir / "manifest.json")) {
        try {
            std::ifstream f(corpus_dir / "manifest.json");
            nlohmann::json j;
            f >> j;
            regen = j.at("seed").get<uint64_t>() != static_cast<uint64_t>(cfg.get_int("seed")) ||
                    j.at("resolution").get<int>() != cfg.get_int("resolution");
        } catch (const std::exception&) {
            regen = true;
        }
    }
    try {
        if (regen) {
            say("generating corpus");
            generate_corpus(cfg, corpus_dir);
        } else {
            say("reusing corpus");
        }
    } catch (const std::exception& e) {
        throw IoError(std::string("stage prepare-data failed (config ") + hex64(config_hash) +
                      "): " + e.what());
    }
    LoadedCorpus corpus = load_corpus(corpus_dir);
    SyncCorpus sync_corpus = make_sync_corpus(corpus);
    SGICorpus sgi_corpus = make_sgi_corpus(corpus);

    // ---- stage: train-syncnet (always trained: it is also the Sync metric)
    SyncExpert expert(detail::sync_expert_config(cfg));
    std::filesystem::path sync_ckpt = work_dir / "syncnet.ckpt";
    if (detail::stage_reusable(sync_ckpt, config_hash, palette_hash)) {
        say("reusing sync expert checkpoint");
        load_checkpoint(sync_ckpt, expert.params(), nullptr, config_hash, palette_hash);
        report["stages"]["syncnet"]["reused"] = true;
    } else {
        say("training sync expert");
        SyncTrainResult r = train_expert(expert, sync_corpus, cfg, mlog.callback("sync_expert"));
        CheckpointHeader hdr;
        hdr.module = "sync_expert";
        hdr.step = static_cast<uint64_t>(r.steps);
        hdr.config_hash = config_hash;
        hdr.palette_hash = palette_hash;
        save_checkpoint(sync_ckpt, hdr, expert.params());
        report["stages"]["syncnet"]["accuracy"] = r.held_out_accuracy;
        report["stages"]["syncnet"]["reused"] = false;
        mlog.record("sync_expert", "final_accuracy", r.steps, r.held_out_accuracy);
    }
    {
        Rng eval_rng(static_cast<uint64_t>(cfg.get_int("seed")) ^ 0xE7A1ull);
        float acc = evaluate_sync_accuracy(
            expert, sync_corpus.test.empty() ? sync_corpus.train : sync_corpus.test,
            sync_corpus.classes, static_cast<int>(cfg.get_int("sync.eval_samples")), eval_rng);
        report["metrics"]["sync_accuracy"] = acc;
    }

    // ---- stage: train-tsg
    TSGModel tsg(detail::tsg_config(cfg));
    std::filesystem::path tsg_ckpt = work_dir / "tsg.ckpt";
    std::vector<ParamSet*> tsg_sets = {&tsg.params(), &tsg.provider().params()};
    if (detail::stage_reusable(tsg_ckpt, config_hash, palette_hash)) {
        say("reusing tsg checkpoint");
        load_checkpoint(tsg_ckpt, tsg_sets, nullptr, config_hash, palette_hash);
    } else {
        say("training tsg");
        TSGTrainResult r = train_tsg(tsg, cfg.get_bool("tsg.use_syncnet") ? &expert : nullptr,
                                     sync_corpus, cfg, mlog.callback("tsg"));
        CheckpointHeader hdr;
        hdr.module = "tsg";
        hdr.step = static_cast<uint64_t>(r.steps);
        hdr.config_hash = config_hash;
        hdr.palette_hash = palette_hash;
        save_checkpoint(tsg_ckpt, hdr, tsg_sets);
        report["stages"]["tsg"]["final_wce"] = r.last_report.wce;
        report["stages"]["tsg"]["final_total"] = r.last_report.total;
    }

    // ---- stage: train-sgi
    SGIModel sgi(static_cast<int>(cfg.get_int("resolution")), static_cast<int>(cfg.get_int("classes")),
                 static_cast<int>(cfg.get_int("sgi.style_dim")), sgi_corpus.num_identities,
                 static_cast<uint64_t>(cfg.get_int("seed")) ^ 0x561ull);
    std::filesystem::path sgi_ckpt = work_dir / "sgi.ckpt";
    if (detail::stage_reusable(sgi_ckpt, config_hash, palette_hash)) {
        say("reusing sgi checkpoint");
        load_checkpoint(sgi_ckpt, sgi.all_sets(), nullptr, config_hash, palette_hash);
    } else {
        say("training sgi");
        SGITrainResult r = train_sgi(sgi, sgi_corpus, cfg, mlog.callback("sgi"));
        CheckpointHeader hdr;
        hdr.module = "sgi";
        hdr.step = static_cast<uint64_t>(r.steps);
        hdr.config_hash = config_hash;
        hdr.palette_hash = palette_hash;
        save_checkpoint(sgi_ckpt, hdr, sgi.all_sets());
        report["stages"]["sgi"]["held_out_psnr"] = r.held_out_psnr;
    }
    report["metrics"]["sgi_reconstruction_psnr"] =
        sgi_reconstruction_psnr(sgi, sgi_corpus.test.empty() ? sgi_corpus.train : sgi_corpus.test);

    // ---- stage: infer (self-driven on held-out clips)
    std::filesystem::path infer_dir = work_dir / "infer";
    PoseSourceMode mode = cfg.get_bool("tsg.autoregressive") ? PoseSourceMode::Autoregressive
                                                             : PoseSourceMode::SelfDriven;
    for (const auto* clip : corpus.split("test")) {
        std::filesystem::path cdir = infer_dir / clip->name;
        if (std::filesystem::exists(cdir / "done")) continue;
        say("inferring " + clip->name);
        std::filesystem::create_directories(cdir, ec);
        int frames = static_cast<int>(clip->masks.size());
        std::vector<SegmentationMap> masks =
            generate_sequence(tsg, clip->masks[0], clip->mel, frames, mode, &clip->masks);
        StyleCodes codes = sgi.encoder().codes_for(clip->images[0], clip->masks[0]);
        for (int t = 0; t < frames; ++t) {
            write_pgm(cdir / frame_name("mask_", t, "pgm"), masks[static_cast<size_t>(t)]);
            Tensor frame = sgi.generator().generate(masks[static_cast<size_t>(t)], codes);
            write_ppm(cdir / frame_name("frame_", t, "ppm"), frame);
        }
        std::ofstream done(cdir / "done");
        done << frames << "\n";
    }

    // ---- stage: eval
    say("evaluating");
    nlohmann::json ev = evaluate_generated(corpus, expert, infer_dir,
                                           cfg.get_float("eval.lmd_penalty"));
    for (auto it = ev.begin(); it != ev.end(); ++it) {
        report["metrics"][it.key()] = it.value();
        mlog.record("eval", it.key(), 0, it.value().get<double>());
    }

    std::ofstream rf(work_dir / "report.json");
    if (!rf) throw IoError("cannot write report.json");
    rf << report.dump(1) << "\n";
    return {report};
}

}  // namespace segface
