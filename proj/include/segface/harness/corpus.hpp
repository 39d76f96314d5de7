#pragma once

// Corpus builder and loader. Each identity gets a train clip and a
// held-out test clip (different articulation and bob phase, same identity
// parameters). Everything on disk is traceable through manifest.json:
// seeds, paths, split, palette colors and per-frame articulation.

#include <json.hpp>

#include "segface/audio/mel.hpp"
#include "segface/harness/config.hpp"
#include "segface/harness/synth.hpp"
#include "segface/sgi/train.hpp"
#include "segface/sync/train.hpp"

namespace segface {

struct CorpusClip {
    std::string name;
    std::string dir;
    int identity = 0;
    std::string split;  // "train" | "test"
    uint64_t clip_seed = 0;
    int frames = 0;
    std::vector<float> articulation;
};

struct CorpusManifest {
    uint64_t seed = 0;
    int resolution = 64;
    int classes = 12;
    std::vector<CorpusClip> clips;
    std::vector<IdentityParams> identities;
};

inline CorpusManifest generate_corpus(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create corpus directory " + out_dir.string());

    CorpusManifest man;
    man.seed = static_cast<uint64_t>(cfg.get_int("seed"));
    man.resolution = static_cast<int>(cfg.get_int("resolution"));
    man.classes = static_cast<int>(cfg.get_int("classes"));
    const int identities = static_cast<int>(cfg.get_int("corpus.identities"));
    const int train_frames = static_cast<int>(cfg.get_int("corpus.train_frames"));
    const int test_frames = static_cast<int>(cfg.get_int("corpus.test_frames"));

    Rng seeder(man.seed ^ 0xC0Bu);
    for (int i = 0; i < identities; ++i)
        man.identities.push_back(make_identity(man.seed * 131 + static_cast<uint64_t>(i), man.identities));

    write_palette_manifest(out_dir / "palette.txt", canonical_palette());

    for (int i = 0; i < identities; ++i) {
        for (int part = 0; part < 2; ++part) {
            CorpusClip clip;
            clip.identity = i;
            clip.split = part == 0 ? "train" : "test";
            clip.frames = part == 0 ? train_frames : test_frames;
            clip.clip_seed = seeder.fork();
            char buf[32];
            std::snprintf(buf, sizeof(buf), "id%02d_%s", i, clip.split.c_str());
            clip.name = buf;
            clip.dir = clip.name;
            clip.articulation = make_articulation(clip.clip_seed, clip.frames);

            std::filesystem::path cdir = out_dir / clip.dir;
            std::filesystem::create_directories(cdir, ec);
            if (ec) throw IoError("cannot create clip directory " + cdir.string());
            for (int t = 0; t < clip.frames; ++t) {
                RenderedFrame f = render_frame(man.identities[static_cast<size_t>(i)],
                                               clip.articulation[static_cast<size_t>(t)], t,
                                               man.resolution);
                write_ppm(cdir / frame_name("frame_", t, "ppm"), f.image);
                write_pgm(cdir / frame_name("mask_", t, "pgm"), f.mask);
            }
            write_wav(cdir / "audio.wav", synthesize_audio(clip.articulation, clip.clip_seed), 16000);
            man.clips.push_back(std::move(clip));
        }
    }

    nlohmann::json j;
    j["seed"] = man.seed;
    j["resolution"] = man.resolution;
    j["classes"] = man.classes;
    j["palette_hash"] = hex64(canonical_palette().hash());
    for (const auto& c : man.clips) {
        nlohmann::json jc;
        jc["name"] = c.name;
        jc["dir"] = c.dir;
        jc["identity"] = c.identity;
        jc["split"] = c.split;
        jc["clip_seed"] = c.clip_seed;
        jc["frames"] = c.frames;
        jc["articulation"] = c.articulation;
        j["clips"].push_back(jc);
    }
    for (const auto& id : man.identities) {
        nlohmann::json ji;
        for (const auto& col : id.colors) ji["colors"].push_back({col[0], col[1], col[2]});
        ji["face_rx"] = id.face_rx;
        ji["face_ry"] = id.face_ry;
        ji["fringe"] = id.fringe;
        ji["mouth_half_width"] = id.mouth_half_width;
        ji["bob_phase"] = id.bob_phase;
        ji["grad_strength"] = id.grad_strength;
        j["identities"].push_back(ji);
    }
    std::ofstream f(out_dir / "manifest.json");
    if (!f) throw IoError("cannot write corpus manifest");
    f << j.dump(1) << "\n";
    return man;
}

struct LoadedClip {
    std::string name;
    int identity = 0;
    std::string split;
    std::vector<Tensor> images;
    std::vector<SegmentationMap> masks;
    MelSpectrogram mel;
    std::vector<float> articulation;
};

struct LoadedCorpus {
    int resolution = 64;
    int classes = 12;
    uint64_t seed = 0;
    std::vector<LoadedClip> clips;

    std::vector<const LoadedClip*> split(const std::string& which) const {
        std::vector<const LoadedClip*> out;
        for (const auto& c : clips)
            if (c.split == which) out.push_back(&c);
        return out;
    }
};

inline LoadedCorpus load_corpus(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw IoError("cannot open corpus manifest in " + dir.string());
    nlohmann::json j;
    f >> j;
    LoadedCorpus corpus;
    corpus.resolution = j.at("resolution");
    corpus.classes = j.at("classes");
    corpus.seed = j.at("seed");
    for (const auto& jc : j.at("clips")) {
        LoadedClip clip;
        clip.name = jc.at("name");
        clip.identity = jc.at("identity");
        clip.split = jc.at("split");
        clip.articulation = jc.at("articulation").get<std::vector<float>>();
        int frames = jc.at("frames");
        std::filesystem::path cdir = dir / jc.at("dir").get<std::string>();
        for (int t = 0; t < frames; ++t) {
            clip.images.push_back(read_ppm(cdir / frame_name("frame_", t, "ppm")));
            clip.masks.push_back(read_pgm(cdir / frame_name("mask_", t, "pgm")));
        }
        WavData wav = read_wav(cdir / "audio.wav");
        clip.mel = compute_mel(wav.samples, wav.sample_rate);
        corpus.clips.push_back(std::move(clip));
    }
    return corpus;
}

inline SyncCorpus make_sync_corpus(const LoadedCorpus& corpus) {
    SyncCorpus out;
    out.classes = corpus.classes;
    for (const auto& c : corpus.clips) {
        ClipAV av;
        av.masks = c.masks;
        av.mel = c.mel;
        av.identity = c.identity;
        (c.split == "train" ? out.train : out.test).push_back(std::move(av));
    }
    return out;
}

inline SGICorpus make_sgi_corpus(const LoadedCorpus& corpus) {
    SGICorpus out;
    out.classes = corpus.classes;
    int max_id = 0;
    for (const auto& c : corpus.clips) {
        ClipFrames cf;
        cf.images = c.images;
        cf.masks = c.masks;
        cf.identity = c.identity;
        max_id = std::max(max_id, c.identity);
        (c.split == "train" ? out.train : out.test).push_back(std::move(cf));
    }
    out.num_identities = max_id + 1;
    return out;
}

}  // namespace segface
