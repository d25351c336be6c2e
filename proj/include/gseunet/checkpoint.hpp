#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gseunet/errors.hpp"
#include "gseunet/model.hpp"

// Checkpoint layout, all integers little-endian:
//   "GSEU" | version u32 | config (9 fields, see below) | entry count u32 |
//   per entry: name length u32, name bytes, rank u32, dims u64 each,
//   payload as raw 32-bit floats.
// Entries appear in the model's parameter order, so save -> load -> save
// reproduces the byte stream exactly.

namespace gseunet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
    put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_i32(std::string& out, std::int32_t v) {
    put_u32(out, static_cast<std::uint32_t>(v));
}

struct ByteReader {
    const std::string& buf;
    const std::string& path;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw FormatError(path + ": truncated checkpoint");
    }
    std::uint32_t u32() {
        need(4);
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
        pos += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        return lo | (static_cast<std::uint64_t>(u32()) << 32);
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline void put_config(std::string& out, const ModelConfig& cfg) {
    put_u32(out, cfg.variant == Variant::baseline ? 0u : 1u);
    put_i32(out, cfg.input_size);
    put_i32(out, cfg.depth);
    put_i32(out, cfg.base_channels);
    put_i32(out, cfg.classes);
    put_i32(out, cfg.groups);
    put_i32(out, cfg.eca_k);
    put_i32(out, cfg.shift);
    put_u32(out, cfg.recombine == Recombine::concat_project ? 0u : 1u);
}

inline ModelConfig read_config(ByteReader& r) {
    ModelConfig cfg;
    const std::uint32_t variant = r.u32();
    if (variant > 1) {
        throw FormatError(r.path + ": invalid variant tag " + std::to_string(variant));
    }
    cfg.variant = variant == 0 ? Variant::baseline : Variant::improved;
    cfg.input_size = r.i32();
    cfg.depth = r.i32();
    cfg.base_channels = r.i32();
    cfg.classes = r.i32();
    cfg.groups = r.i32();
    cfg.eca_k = r.i32();
    cfg.shift = r.i32();
    const std::uint32_t recombine = r.u32();
    if (recombine > 1) {
        throw FormatError(r.path + ": invalid recombine tag " + std::to_string(recombine));
    }
    cfg.recombine = recombine == 0 ? Recombine::concat_project : Recombine::add;
    return cfg;
}

inline void put_floats(std::string& out, const std::vector<float>& values) {
    if constexpr (std::endian::native == std::endian::little) {
        const std::size_t at = out.size();
        out.resize(at + values.size() * 4);
        std::memcpy(out.data() + at, values.data(), values.size() * 4);
    } else {
        for (const float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
}

inline void read_floats(ByteReader& r, std::vector<float>& values) {
    r.need(values.size() * 4);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(values.data(), r.buf.data() + r.pos, values.size() * 4);
        r.pos += values.size() * 4;
    } else {
        for (float& v : values) v = std::bit_cast<float>(r.u32());
    }
}

}  // namespace detail

inline void save_checkpoint(const Model& model, const std::string& path) {
    std::string buf;
    buf += "GSEU";
    detail::put_u32(buf, kCheckpointVersion);
    detail::put_config(buf, model.config);
    detail::put_u32(buf, static_cast<std::uint32_t>(model.params.size()));
    for (const auto& [name, t] : model.params) {
        detail::put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf += name;
        detail::put_u32(buf, static_cast<std::uint32_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) {
            detail::put_u64(buf, static_cast<std::uint64_t>(t.dim(d)));
        }
        detail::put_floats(buf, t.data());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    f.flush();
    if (!f) throw IoError("failed while writing " + path);
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::ByteReader r{buf, path};

    if (r.bytes(4) != "GSEU") throw FormatError(path + ": bad magic, not a checkpoint");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig cfg = detail::read_config(r);
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(path + ": inconsistent config: " + e.what());
    }

    Model model = build_model(cfg, 0);
    const std::uint32_t count = r.u32();
    if (count != model.params.size()) {
        throw FormatError(path + ": " + std::to_string(count) + " entries, but the config implies " +
                          std::to_string(model.params.size()));
    }
    for (auto& [name, t] : model.params) {
        const std::uint32_t name_len = r.u32();
        const std::string entry_name = r.bytes(name_len);
        if (entry_name != name) {
            throw FormatError(path + ": entry named '" + entry_name + "', expected '" + name + "'");
        }
        const std::uint32_t rank = r.u32();
        if (rank != static_cast<std::uint32_t>(t.rank())) {
            throw FormatError(path + ": '" + name + "' has rank " + std::to_string(rank) +
                              ", expected " + std::to_string(t.rank()));
        }
        for (int d = 0; d < t.rank(); ++d) {
            const std::uint64_t dim = r.u64();
            if (dim != static_cast<std::uint64_t>(t.dim(d))) {
                throw FormatError(path + ": '" + name + "' dimension " + std::to_string(d) +
                                  " is " + std::to_string(dim) + ", expected " +
                                  std::to_string(t.dim(d)));
            }
        }
        detail::read_floats(r, t.data());
    }
    if (r.pos != buf.size()) {
        throw FormatError(path + ": " + std::to_string(buf.size() - r.pos) +
                          " trailing bytes after the last entry");
    }
    return model;
}

}  // namespace gseunet
