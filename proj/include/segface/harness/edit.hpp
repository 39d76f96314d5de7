#pragma once

// Editing sessions: run the trained pair (TSG -> SGI) over a clip while
// applying declarative edits — mask-level blinks, per-region style swaps
// from a reference frame, and background composites.

#include "segface/harness/corpus.hpp"
#include "segface/tsg/train.hpp"

namespace segface {

struct TimedEdit {
    EditSpec spec;
    int from = 0;
    int to = std::numeric_limits<int>::max();  // inclusive
    bool active(int frame) const { return frame >= from && frame <= to; }
};

// Text records: `kind region payload...` with optional `frames <from> <to>`.
//   blink EYE 20 18 30 46 [frames 10 15]      (stencil y0 x0 y1 x1, half-open)
//   region_texture_swap HAIR 0 [frames a b]   (payload = reference frame)
//   background_swap BACKGROUND 0 [frames a b]
inline std::vector<TimedEdit> parse_edit_specs(const std::filesystem::path& path,
                                               const ClassPalette& palette) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open edit spec " + path.string());
    std::vector<TimedEdit> out;
    std::string line;
    int lineno = 0;
    auto region_id = [&](const std::string& tok) -> int32_t {
        for (size_t i = 0; i < palette.labels.size(); ++i)
            if (palette.labels[i] == tok) return static_cast<int32_t>(i);
        try {
            int id = std::stoi(tok);
            if (id >= 0 && id < palette.num_classes()) return id;
        } catch (const std::logic_error&) {
        }
        throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": unknown region '" +
                           tok + "'");
    };
    while (std::getline(f, line)) {
        ++lineno;
        std::istringstream is(line);
        std::string kind;
        if (!(is >> kind) || kind[0] == '#') continue;
        TimedEdit te;
        std::string region;
        is >> region;
        te.spec.region_id = region_id(region);
        if (kind == "blink") {
            te.spec.kind = EditKind::Blink;
            if (!(is >> te.spec.stencil.y0 >> te.spec.stencil.x0 >> te.spec.stencil.y1 >>
                  te.spec.stencil.x1))
                throw InvalidInput(path.string() + ":" + std::to_string(lineno) +
                                   ": blink needs a y0 x0 y1 x1 stencil");
        } else if (kind == "region_texture_swap") {
            te.spec.kind = EditKind::RegionTextureSwap;
            if (!(is >> te.spec.reference_frame))
                throw InvalidInput(path.string() + ":" + std::to_string(lineno) +
                                   ": region_texture_swap needs a reference frame");
        } else if (kind == "background_swap") {
            te.spec.kind = EditKind::BackgroundSwap;
            is >> te.spec.reference_frame;
        } else {
            throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": unknown edit kind '" +
                               kind + "'");
        }
        std::string marker;
        if (is >> marker) {
            if (marker != "frames" || !(is >> te.from >> te.to))
                throw InvalidInput(path.string() + ":" + std::to_string(lineno) +
                                   ": expected `frames <from> <to>`");
        }
        out.push_back(te);
    }
    return out;
}

struct EditSessionResult {
    int frames = 0;
    std::vector<SegmentationMap> masks;
};

// Per frame: TSG mask -> mask-level edits -> SGI generation with the
// (possibly swapped) codes -> optional background composite. All edits are
// validated before the first frame is produced.
inline EditSessionResult edit_session(const TSGModel& tsg, const SGIModel& sgi,
                                      const LoadedClip& clip, const std::vector<TimedEdit>& edits,
                                      const Tensor* background,
                                      const std::filesystem::path& out_dir,
                                      PoseSourceMode mode = PoseSourceMode::SelfDriven) {
    const int classes = tsg.config().classes;
    for (const auto& e : edits) {
        if (e.spec.region_id < 0 || e.spec.region_id >= classes)
            throw InvalidInput("edit references unknown region id " +
                               std::to_string(e.spec.region_id));
        if (e.spec.kind == EditKind::RegionTextureSwap &&
            (e.spec.reference_frame < 0 ||
             e.spec.reference_frame >= static_cast<int>(clip.images.size())))
            throw InvalidInput("edit references reference frame outside the clip");
        if (e.spec.kind == EditKind::BackgroundSwap && !background)
            throw InvalidInput("background_swap edit requires a background image");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string());

    const int frames = static_cast<int>(clip.masks.size());
    std::vector<SegmentationMap> masks =
        generate_sequence(tsg, clip.masks[0], clip.mel, frames, mode, &clip.masks);

    StyleCodes base_codes = sgi.encoder().codes_for(clip.images[0], clip.masks[0]);
    bool any_bg_edit = false;
    for (const auto& e : edits) any_bg_edit |= e.spec.kind == EditKind::BackgroundSwap;

    EditSessionResult result;
    for (int t = 0; t < frames; ++t) {
        SegmentationMap mask = masks[static_cast<size_t>(t)];
        StyleCodes codes = base_codes;
        bool composite_bg = background && !any_bg_edit;  // plain --background: all frames
        for (const auto& e : edits) {
            if (!e.active(t)) continue;
            switch (e.spec.kind) {
                case EditKind::Blink:
                    mask = apply_edit(mask, e.spec, classes);
                    break;
                case EditKind::RegionTextureSwap: {
                    StyleCodes ref = sgi.encoder().codes_for(
                        clip.images[static_cast<size_t>(e.spec.reference_frame)],
                        clip.masks[static_cast<size_t>(e.spec.reference_frame)]);
                    codes = swap_region_codes(codes, ref, e.spec.region_id);
                    break;
                }
                case EditKind::BackgroundSwap:
                    composite_bg = true;
                    break;
            }
        }
        Tensor frame = sgi.generator().generate(mask, codes);
        if (composite_bg) frame = swap_background(frame, mask, *background);
        write_pgm(out_dir / frame_name("mask_", t, "pgm"), mask);
        write_ppm(out_dir / frame_name("frame_", t, "ppm"), frame);
        result.masks.push_back(std::move(mask));
    }
    result.frames = frames;
    return result;
}

}  // namespace segface
