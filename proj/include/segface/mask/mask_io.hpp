#pragma once

// On-disk formats: masks are 8-bit single-channel PGM (one file per frame,
// zero-padded frame index), frames are 8-bit RGB PPM, and the palette is a
// text manifest of `raw_id -> canonical_name` lines.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "segface/mask/mask.hpp"

namespace segface {

inline std::string frame_name(const std::string& prefix, int index, const std::string& ext) {
    std::ostringstream os;
    os << prefix << std::setw(6) << std::setfill('0') << index << "." << ext;
    return os.str();
}

inline void write_pgm(const std::filesystem::path& path, const SegmentationMap& map) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "P5\n" << map.width << " " << map.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(map.width));
    for (int i = 0; i < map.height; ++i) {
        for (int j = 0; j < map.width; ++j) row[static_cast<size_t>(j)] = static_cast<unsigned char>(map.at(i, j));
        f.write(reinterpret_cast<const char*>(row.data()), map.width);
    }
    if (!f) throw IoError("short write to " + path.string());
}

namespace detail {
inline int pnm_int(std::istream& s) {
    int c = s.get();
    while (c == '#' || std::isspace(c)) {
        if (c == '#')
            while (c != '\n' && c != EOF) c = s.get();
        c = s.get();
    }
    int v = 0;
    while (std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = s.get();
    }
    return v;
}
}  // namespace detail

inline SegmentationMap read_pgm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    char m0 = static_cast<char>(f.get()), m1 = static_cast<char>(f.get());
    if (m0 != 'P' || m1 != '5') throw IoError(path.string() + ": not a binary PGM");
    int w = detail::pnm_int(f), h = detail::pnm_int(f), maxv = detail::pnm_int(f);
    if (maxv > 255) throw IoError(path.string() + ": 16-bit PGM unsupported");
    SegmentationMap map(h, w);
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("short read from " + path.string());
    for (size_t i = 0; i < buf.size(); ++i) map.labels[i] = buf[i];
    return map;
}

// Frames travel as (3,H,W) float tensors in [0,1]; quantization to 8 bits
// happens only here.
inline void write_ppm(const std::filesystem::path& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw InvalidInput("write_ppm: (3,H,W) tensor expected");
    int h = img.dim(1), w = img.dim(2);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c) {
                float v = std::clamp(img.v[(static_cast<size_t>(c) * h + i) * w + j], 0.0f, 1.0f);
                row[static_cast<size_t>(j) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("short write to " + path.string());
}

inline Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    char m0 = static_cast<char>(f.get()), m1 = static_cast<char>(f.get());
    if (m0 != 'P' || m1 != '6') throw IoError(path.string() + ": not a binary PPM");
    int w = detail::pnm_int(f), h = detail::pnm_int(f), maxv = detail::pnm_int(f);
    if (maxv > 255) throw IoError(path.string() + ": 16-bit PPM unsupported");
    Tensor img({3, h, w});
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("short read from " + path.string());
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c)
                img.v[(static_cast<size_t>(c) * h + i) * w + j] =
                    static_cast<float>(buf[(static_cast<size_t>(i) * w + j) * 3 + c]) / 255.0f;
    return img;
}

inline void write_palette_manifest(const std::filesystem::path& path, const ClassPalette& p) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    for (size_t raw = 0; raw < p.merge_table.size(); ++raw)
        f << raw << " -> " << p.labels[static_cast<size_t>(p.merge_table[raw])] << "\n";
    if (!f) throw IoError("short write to " + path.string());
}

inline ClassPalette read_palette_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    ClassPalette p;
    std::string line;
    std::vector<std::pair<int, std::string>> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        int raw;
        std::string arrow, name;
        if (!(is >> raw >> arrow >> name) || arrow != "->")
            throw IoError(path.string() + ": bad manifest line: " + line);
        rows.emplace_back(raw, name);
    }
    p.merge_table.assign(rows.size(), -1);
    for (auto& [raw, name] : rows) {
        auto it = std::find(p.labels.begin(), p.labels.end(), name);
        int id;
        if (it == p.labels.end()) {
            id = static_cast<int>(p.labels.size());
            p.labels.push_back(name);
        } else {
            id = static_cast<int>(it - p.labels.begin());
        }
        if (raw < 0 || raw >= static_cast<int>(p.merge_table.size()))
            throw IoError(path.string() + ": raw id out of range");
        p.merge_table[static_cast<size_t>(raw)] = id;
    }
    for (int32_t v : p.merge_table)
        if (v < 0) throw IoError(path.string() + ": merge table not total over raw ids");
    return p;
}

}  // namespace segface
