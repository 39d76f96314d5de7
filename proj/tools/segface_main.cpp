// segface command line: prepare-data, train-syncnet, train-tsg, train-sgi,
// infer, edit, eval, pipeline. Exit codes: 0 success, 2 invalid input,
// 3 training divergence, 4 I/O failure.

#include <CLI11.hpp>
#include <iostream>

#include "segface/segface.hpp"

namespace sf = segface;

namespace {

sf::RunConfig load_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
    sf::RunConfig cfg =
        config_path.empty() ? sf::RunConfig::defaults() : sf::RunConfig::from_file(config_path);
    if (config_path.empty()) cfg.apply_env_overrides();
    for (const auto& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw sf::InvalidInput("--set expects key=value, got: " + kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void load_tsg(sf::TSGModel& model, const std::filesystem::path& ckpt) {
    std::vector<sf::ParamSet*> sets = {&model.params(), &model.provider().params()};
    sf::load_checkpoint(ckpt, sets);
}

struct StageIo {
    std::filesystem::path work;
    sf::RunConfig cfg;
    uint64_t palette_hash = sf::canonical_palette().hash();

    sf::LoadedCorpus corpus() const { return sf::load_corpus(work / "corpus"); }
    void save(const std::string& module, const std::filesystem::path& path,
              const std::vector<sf::ParamSet*>& sets, int64_t step) const {
        sf::CheckpointHeader hdr;
        hdr.module = module;
        hdr.step = static_cast<uint64_t>(step);
        hdr.config_hash = cfg.hash();
        hdr.palette_hash = palette_hash;
        sf::save_checkpoint(path, hdr, sets);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"segface: segmentation-driven talking face toolkit"};
    app.require_subcommand(1);

    std::string config_path, work_dir = "work";
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "config file (flat key = value)");
    app.add_option("--work", work_dir, "working directory for artifacts");
    app.add_option("--set", overrides, "override a config key, key=value")->take_all();

    auto* prep = app.add_subcommand("prepare-data", "generate the synthetic corpus");
    auto* tsync = app.add_subcommand("train-syncnet", "train the lip-sync expert");
    auto* ttsg = app.add_subcommand("train-tsg", "train the talking segmentation generator");
    std::string expert_path;
    ttsg->add_option("--expert", expert_path, "sync expert checkpoint");
    auto* tsgi = app.add_subcommand("train-sgi", "train the style injection network");

    auto* infer = app.add_subcommand("infer", "generate frames");
    std::string masks_dir, reference_img, reference_mask, out_dir = "out", sgi_ckpt, tsg_ckpt,
                clip_name;
    bool autoregressive = false;
    infer->add_option("--masks", masks_dir, "directory of mask frames (SGI-only mode)");
    infer->add_option("--reference", reference_img, "reference image (.ppm)");
    infer->add_option("--reference-mask", reference_mask, "mask of the reference image (.pgm)");
    infer->add_option("--sgi", sgi_ckpt, "SGI checkpoint");
    infer->add_option("--tsg", tsg_ckpt, "TSG checkpoint (full mode)");
    infer->add_option("--clip", clip_name, "corpus clip name (full mode)");
    infer->add_option("--out", out_dir, "output directory");
    infer->add_flag("--autoregressive", autoregressive, "feed generated masks back as pose source");

    auto* edit = app.add_subcommand("edit", "apply local edits while generating");
    std::string spec_path, background_path, edit_clip = "", edit_out = "edited";
    edit->add_option("--spec", spec_path, "edit spec file")->required();
    edit->add_option("--background", background_path, "background image (.ppm)");
    edit->add_option("--clip", edit_clip, "corpus clip name");
    edit->add_option("--tsg", tsg_ckpt, "TSG checkpoint");
    edit->add_option("--sgi", sgi_ckpt, "SGI checkpoint");
    edit->add_option("--out", edit_out, "output directory");

    auto* evalc = app.add_subcommand("eval", "evaluate generated frames against ground truth");
    std::string pred_dir, gt_clip, eval_expert, report_path = "eval_report.jsonl";
    evalc->add_option("--pred", pred_dir, "directory with generated mask_/frame_ files")->required();
    evalc->add_option("--gt", gt_clip, "corpus clip name providing ground truth")->required();
    evalc->add_option("--expert", eval_expert, "sync expert checkpoint")->required();
    evalc->add_option("--report", report_path, "JSON-lines report output");

    auto* pipe = app.add_subcommand("pipeline", "run prepare -> train x3 -> infer -> eval");
    bool no_syncnet = false;
    pipe->add_flag("--no-syncnet", no_syncnet, "ablation: drop the expert loss from TSG training");

    CLI11_PARSE(app, argc, argv);

    try {
        StageIo io;
        io.cfg = load_config(config_path, overrides);
        io.work = work_dir;
        std::filesystem::create_directories(io.work);
        sf::MetricsLog mlog(io.work / "metrics.jsonl", io.cfg.hash());

        if (prep->parsed()) {
            sf::generate_corpus(io.cfg, io.work / "corpus");
            std::cout << "corpus written to " << (io.work / "corpus").string() << std::endl;
        } else if (tsync->parsed()) {
            sf::LoadedCorpus corpus = io.corpus();
            sf::SyncCorpus sc = sf::make_sync_corpus(corpus);
            sf::SyncExpert expert(sf::detail::sync_expert_config(io.cfg));
            sf::SyncTrainResult r = sf::train_expert(expert, sc, io.cfg, mlog.callback("sync_expert"));
            io.save("sync_expert", io.work / "syncnet.ckpt", {&expert.params()}, r.steps);
            std::cout << "held-out accuracy " << r.held_out_accuracy << std::endl;
        } else if (ttsg->parsed()) {
            sf::LoadedCorpus corpus = io.corpus();
            sf::SyncCorpus sc = sf::make_sync_corpus(corpus);
            sf::SyncExpert expert(sf::detail::sync_expert_config(io.cfg));
            const sf::SyncExpert* expert_ptr = nullptr;
            if (io.cfg.get_bool("tsg.use_syncnet")) {
                std::filesystem::path ep =
                    expert_path.empty() ? io.work / "syncnet.ckpt" : std::filesystem::path(expert_path);
                sf::load_checkpoint(ep, expert.params());
                expert_ptr = &expert;
            }
            sf::TSGModel model(sf::detail::tsg_config(io.cfg));
            sf::TSGTrainResult r = sf::train_tsg(model, expert_ptr, sc, io.cfg, mlog.callback("tsg"));
            io.save("tsg", io.work / "tsg.ckpt", {&model.params(), &model.provider().params()},
                    r.steps);
            std::cout << "final loss " << r.last_report.total << std::endl;
        } else if (tsgi->parsed()) {
            sf::LoadedCorpus corpus = io.corpus();
            sf::SGICorpus sc = sf::make_sgi_corpus(corpus);
            sf::SGIModel model(corpus.resolution, corpus.classes,
                               static_cast<int>(io.cfg.get_int("sgi.style_dim")), sc.num_identities,
                               static_cast<uint64_t>(io.cfg.get_int("seed")) ^ 0x561ull);
            sf::SGITrainResult r = sf::train_sgi(model, sc, io.cfg, mlog.callback("sgi"));
            io.save("sgi", io.work / "sgi.ckpt", model.all_sets(), r.steps);
            std::cout << "held-out reconstruction PSNR " << r.held_out_psnr << " dB" << std::endl;
        } else if (infer->parsed()) {
            sf::SGIModel sgi(static_cast<int>(io.cfg.get_int("resolution")),
                             static_cast<int>(io.cfg.get_int("classes")),
                             static_cast<int>(io.cfg.get_int("sgi.style_dim")),
                             static_cast<int>(io.cfg.get_int("corpus.identities")),
                             static_cast<uint64_t>(io.cfg.get_int("seed")) ^ 0x561ull);
            sf::load_checkpoint(sgi_ckpt.empty() ? io.work / "sgi.ckpt" : std::filesystem::path(sgi_ckpt),
                                sgi.all_sets());
            std::filesystem::create_directories(out_dir);
            if (!masks_dir.empty()) {
                // SGI-only: retexture an existing mask sequence
                if (reference_img.empty() || reference_mask.empty())
                    throw sf::InvalidInput("--masks mode needs --reference and --reference-mask");
                sf::Tensor ref = sf::read_ppm(reference_img);
                sf::SegmentationMap ref_mask = sf::read_pgm(reference_mask);
                sf::StyleCodes codes = sgi.encoder().codes_for(ref, ref_mask);
                int t = 0;
                for (;; ++t) {
                    std::filesystem::path mp =
                        std::filesystem::path(masks_dir) / sf::frame_name("mask_", t, "pgm");
                    if (!std::filesystem::exists(mp)) break;
                    sf::SegmentationMap mask = sf::read_pgm(mp);
                    sf::write_ppm(std::filesystem::path(out_dir) / sf::frame_name("frame_", t, "ppm"),
                                  sgi.generator().generate(mask, codes));
                }
                if (t == 0) throw sf::InvalidInput("no mask_*.pgm files found in " + masks_dir);
                std::cout << "generated " << t << " frames" << std::endl;
            } else {
                if (clip_name.empty()) throw sf::InvalidInput("full mode needs --clip");
                sf::TSGModel tsg(sf::detail::tsg_config(io.cfg));
                load_tsg(tsg, tsg_ckpt.empty() ? io.work / "tsg.ckpt" : std::filesystem::path(tsg_ckpt));
                sf::LoadedCorpus corpus = io.corpus();
                const sf::LoadedClip* clip = nullptr;
                for (const auto& c : corpus.clips)
                    if (c.name == clip_name) clip = &c;
                if (!clip) throw sf::InvalidInput("clip not found: " + clip_name);
                auto masks = sf::generate_sequence(
                    tsg, clip->masks[0], clip->mel, static_cast<int>(clip->masks.size()),
                    autoregressive ? sf::PoseSourceMode::Autoregressive : sf::PoseSourceMode::SelfDriven,
                    &clip->masks);
                sf::StyleCodes codes = sgi.encoder().codes_for(clip->images[0], clip->masks[0]);
                for (size_t t = 0; t < masks.size(); ++t) {
                    sf::write_pgm(std::filesystem::path(out_dir) /
                                      sf::frame_name("mask_", static_cast<int>(t), "pgm"),
                                  masks[t]);
                    sf::write_ppm(std::filesystem::path(out_dir) /
                                      sf::frame_name("frame_", static_cast<int>(t), "ppm"),
                                  sgi.generator().generate(masks[t], codes));
                }
                std::cout << "generated " << masks.size() << " frames" << std::endl;
            }
        } else if (edit->parsed()) {
            sf::LoadedCorpus corpus = io.corpus();
            if (edit_clip.empty()) throw sf::InvalidInput("edit needs --clip");
            const sf::LoadedClip* clip = nullptr;
            for (const auto& c : corpus.clips)
                if (c.name == edit_clip) clip = &c;
            if (!clip) throw sf::InvalidInput("clip not found: " + edit_clip);
            sf::TSGModel tsg(sf::detail::tsg_config(io.cfg));
            load_tsg(tsg, tsg_ckpt.empty() ? io.work / "tsg.ckpt" : std::filesystem::path(tsg_ckpt));
            sf::SGIModel sgi(corpus.resolution, corpus.classes,
                             static_cast<int>(io.cfg.get_int("sgi.style_dim")),
                             static_cast<int>(io.cfg.get_int("corpus.identities")),
                             static_cast<uint64_t>(io.cfg.get_int("seed")) ^ 0x561ull);
            sf::load_checkpoint(sgi_ckpt.empty() ? io.work / "sgi.ckpt" : std::filesystem::path(sgi_ckpt),
                                sgi.all_sets());
            auto edits = sf::parse_edit_specs(spec_path, sf::canonical_palette());
            std::optional<sf::Tensor> bg;
            if (!background_path.empty()) bg = sf::read_ppm(background_path);
            auto r = sf::edit_session(tsg, sgi, *clip, edits, bg ? &*bg : nullptr, edit_out);
            std::cout << "edited " << r.frames << " frames -> " << edit_out << std::endl;
        } else if (evalc->parsed()) {
            sf::LoadedCorpus corpus = io.corpus();
            const sf::LoadedClip* clip = nullptr;
            for (const auto& c : corpus.clips)
                if (c.name == gt_clip) clip = &c;
            if (!clip) throw sf::InvalidInput("clip not found: " + gt_clip);
            sf::SyncExpert expert(sf::detail::sync_expert_config(io.cfg));
            sf::load_checkpoint(eval_expert, expert.params());
            std::vector<sf::SegmentationMap> masks;
            std::vector<sf::Tensor> frames;
            for (int t = 0; t < static_cast<int>(clip->masks.size()); ++t) {
                std::filesystem::path mp =
                    std::filesystem::path(pred_dir) / sf::frame_name("mask_", t, "pgm");
                std::filesystem::path fp =
                    std::filesystem::path(pred_dir) / sf::frame_name("frame_", t, "ppm");
                if (!std::filesystem::exists(mp) || !std::filesystem::exists(fp)) break;
                masks.push_back(sf::read_pgm(mp));
                frames.push_back(sf::read_ppm(fp));
            }
            if (masks.empty()) throw sf::InvalidInput("no predictions found in " + pred_dir);
            std::ofstream rf(report_path);
            double penalty = io.cfg.get_float("eval.lmd_penalty");
            auto emit = [&](const std::string& name, double value, const std::string& scope) {
                nlohmann::json j;
                j["metric"] = name;
                j["value"] = value;
                j["scope"] = scope;
                j["config_hash"] = sf::hex64(io.cfg.hash());
                rf << j.dump() << "\n";
                std::cout << name << " = " << value << std::endl;
            };
            size_t n = masks.size();
            std::vector<sf::SegmentationMap> gtm(clip->masks.begin(), clip->masks.begin() + n);
            emit("mouth_iou", sf::mouth_iou(masks, gtm), "mask");
            emit("upper_agreement", sf::upper_half_agreement(masks, gtm), "mask");
            emit("sync_confidence", sf::sync_confidence(masks, clip->mel, expert), "mask");
            double ps = 0, ss = 0, fl = 0, ml = 0;
            for (size_t t = 0; t < n; ++t) {
                ps += sf::psnr(frames[t], clip->images[t]);
                ss += sf::ssim(frames[t], clip->images[t]);
                fl += sf::landmark_distance(masks[t], gtm[t], sf::LandmarkScope::Face, penalty);
                ml += sf::landmark_distance(masks[t], gtm[t], sf::LandmarkScope::Mouth, penalty);
            }
            emit("psnr", ps / n, "frame");
            emit("ssim", ss / n, "frame");
            emit("flmd", fl / n, "mask");
            emit("mlmd", ml / n, "mask");
            auto ts = sf::temporal_consistency(frames, &masks);
            emit("temporal_mean_diff", ts.mean_frame_diff, "frame");
            emit("mouth_area_smoothness", ts.mouth_area_smoothness, "mask");
        } else if (pipe->parsed()) {
            if (no_syncnet) io.cfg.set("tsg.use_syncnet", "false");
            sf::PipelineResult r = sf::run_pipeline(io.cfg, io.work);
            std::cout << r.report["metrics"].dump(1) << std::endl;
        }
        return 0;
    } catch (const sf::InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << std::endl;
        return 2;
    } catch (const sf::Divergence& e) {
        std::cerr << "training diverged: " << e.what() << std::endl;
        return 3;
    } catch (const sf::IoError& e) {
        std::cerr << "i/o error: " << e.what() << std::endl;
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
}
