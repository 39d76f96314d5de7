#pragma once

// Versioned binary checkpoint container. Header carries the module name,
// step, config hash and palette hash; loading against a different config
// or palette is a hard error. Optimizer state is optional.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>

#include "segface/core/nn.hpp"

namespace segface {

constexpr char kCheckpointMagic[8] = {'S', 'G', 'F', 'C', 'K', 'P', 'T', '\x01'};
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
    uint32_t version = kCheckpointVersion;
    std::string module;
    uint64_t step = 0;
    uint64_t config_hash = 0;
    uint64_t palette_hash = 0;
    bool has_optimizer_state = false;
};

namespace detail {
template <typename T>
void wr(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void rd(std::ifstream& f, T& v) {
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
}
inline void wr_str(std::ofstream& f, const std::string& s) {
    wr(f, static_cast<uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string rd_str(std::ifstream& f) {
    uint32_t n = 0;
    rd(f, n);
    std::string s(n, '\0');
    f.read(s.data(), n);
    return s;
}
inline void wr_tensor(std::ofstream& f, const Tensor& t) {
    wr(f, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) wr(f, static_cast<uint32_t>(d));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
}
inline Tensor rd_tensor(std::ifstream& f) {
    uint32_t rank = 0;
    rd(f, rank);
    std::vector<int> shape(rank);
    for (auto& d : shape) {
        uint32_t v = 0;
        rd(f, v);
        d = static_cast<int>(v);
    }
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
    return t;
}
}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& hdr,
                            const std::vector<ParamSet*>& sets, const Adam* opt = nullptr) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(kCheckpointMagic, 8);
    detail::wr(f, hdr.version);
    detail::wr_str(f, hdr.module);
    detail::wr(f, hdr.step);
    detail::wr(f, hdr.config_hash);
    detail::wr(f, hdr.palette_hash);
    detail::wr(f, static_cast<uint8_t>(opt ? 1 : 0));
    std::vector<Param*> all;
    for (ParamSet* ps : sets) {
        auto v = ps->all();
        all.insert(all.end(), v.begin(), v.end());
    }
    detail::wr(f, static_cast<uint32_t>(all.size()));
    for (Param* p : all) {
        detail::wr_str(f, p->name);
        detail::wr_tensor(f, p->value);
        if (opt) {
            detail::wr_tensor(f, p->adam_m);
            detail::wr_tensor(f, p->adam_v);
        }
    }
    if (opt) detail::wr(f, static_cast<uint64_t>(opt->steps()));
    if (!f) throw IoError("short write to " + path.string());
}

inline void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& hdr,
                            ParamSet& params, const Adam* opt = nullptr) {
    save_checkpoint(path, hdr, std::vector<ParamSet*>{&params}, opt);
}

inline CheckpointHeader peek_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw IoError(path.string() + ": not a checkpoint file");
    CheckpointHeader hdr;
    detail::rd(f, hdr.version);
    if (hdr.version != kCheckpointVersion)
        throw IoError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(hdr.version));
    hdr.module = detail::rd_str(f);
    detail::rd(f, hdr.step);
    detail::rd(f, hdr.config_hash);
    detail::rd(f, hdr.palette_hash);
    uint8_t has_opt = 0;
    detail::rd(f, has_opt);
    hdr.has_optimizer_state = has_opt != 0;
    return hdr;
}

// Loads weights (and optimizer state when present and requested) into an
// already-constructed ParamSet. Tensor names and shapes must match the
// model exactly; config/palette hashes must match when expectations are
// given.
inline CheckpointHeader load_checkpoint(const std::filesystem::path& path,
                                        const std::vector<ParamSet*>& sets, Adam* opt = nullptr,
                                        std::optional<uint64_t> expect_config_hash = {},
                                        std::optional<uint64_t> expect_palette_hash = {}) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw IoError(path.string() + ": not a checkpoint file");
    CheckpointHeader hdr;
    detail::rd(f, hdr.version);
    if (hdr.version != kCheckpointVersion)
        throw IoError(path.string() + ": unsupported checkpoint version");
    hdr.module = detail::rd_str(f);
    detail::rd(f, hdr.step);
    detail::rd(f, hdr.config_hash);
    detail::rd(f, hdr.palette_hash);
    uint8_t has_opt = 0;
    detail::rd(f, has_opt);
    hdr.has_optimizer_state = has_opt != 0;
    if (expect_config_hash && hdr.config_hash != *expect_config_hash)
        throw InvalidInput(path.string() + ": config hash mismatch (checkpoint " +
                           hex64(hdr.config_hash) + ", expected " + hex64(*expect_config_hash) + ")");
    if (expect_palette_hash && hdr.palette_hash != *expect_palette_hash)
        throw InvalidInput(path.string() + ": palette hash mismatch");
    uint32_t count = 0;
    detail::rd(f, count);
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = detail::rd_str(f);
        Tensor value = detail::rd_tensor(f);
        Tensor m, v;
        if (hdr.has_optimizer_state) {
            m = detail::rd_tensor(f);
            v = detail::rd_tensor(f);
        }
        Param* p = nullptr;
        for (ParamSet* ps : sets)
            if ((p = ps->find(name)) != nullptr) break;
        if (!p) throw InvalidInput(path.string() + ": unknown tensor '" + name + "'");
        if (p->value.shape != value.shape)
            throw InvalidInput(path.string() + ": shape mismatch for '" + name + "' (" +
                               value.shape_str() + " vs model " + p->value.shape_str() + ")");
        p->value = std::move(value);
        if (hdr.has_optimizer_state && opt) {
            p->adam_m = std::move(m);
            p->adam_v = std::move(v);
        }
    }
    if (!f) throw IoError(path.string() + ": truncated checkpoint");
    return hdr;
}

inline CheckpointHeader load_checkpoint(const std::filesystem::path& path, ParamSet& params,
                                        Adam* opt = nullptr,
                                        std::optional<uint64_t> expect_config_hash = {},
                                        std::optional<uint64_t> expect_palette_hash = {}) {
    return load_checkpoint(path, std::vector<ParamSet*>{&params}, opt, expect_config_hash,
                           expect_palette_hash);
}

}  // namespace segface
