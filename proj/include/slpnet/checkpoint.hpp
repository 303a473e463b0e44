#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "slpnet/model.hpp"

namespace slpnet {

namespace detail {

inline uint32_t crc32(const uint8_t *data, size_t len) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

struct ByteWriter {
    std::vector<uint8_t> buf;
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(uint8_t(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(uint8_t(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void bytes(const void *p, size_t len) {
        const auto *b = static_cast<const uint8_t *>(p);
        buf.insert(buf.end(), b, b + len);
    }
};

struct ByteReader {
    const std::vector<uint8_t> &buf;
    size_t pos = 0;
    void need(size_t len) const {
        if (pos + len > buf.size()) throw IoError("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(size_t len) {
        need(len);
        std::string s(reinterpret_cast<const char *>(buf.data() + pos), len);
        pos += len;
        return s;
    }
};

constexpr uint32_t kCheckpointMagic = 0x4E504C53u; // "SLPN"
constexpr uint32_t kCheckpointVersion = 1;

inline void write_config(ByteWriter &w, const ModelConfig &cfg) {
    for (int v : cfg.stage_widths) w.u32(uint32_t(v));
    for (int v : cfg.dilation_zeros) w.u32(uint32_t(v));
    w.u32(uint32_t(cfg.input_h));
    w.u32(uint32_t(cfg.input_w));
    w.u64(cfg.seed);
}

inline ModelConfig read_config(ByteReader &r) {
    ModelConfig cfg;
    for (int i = 0; i < 4; ++i) cfg.stage_widths[i] = int(r.u32());
    for (int i = 0; i < 4; ++i) cfg.dilation_zeros[i] = int(r.u32());
    cfg.input_h = int(r.u32());
    cfg.input_w = int(r.u32());
    cfg.seed = r.u64();
    return cfg;
}

inline std::vector<uint8_t> read_file_validated(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 12) throw IoError("checkpoint: truncated file " + path);
    const size_t body = bytes.size() - 4;
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= uint32_t(bytes[body + i]) << (8 * i);
    if (stored != crc32(bytes.data(), body))
        throw IoError("checkpoint: checksum mismatch in " + path);
    bytes.resize(body);
    return bytes;
}

} // namespace detail

/// Checkpoint layout (all integers little-endian):
///   u32 magic, u32 version, ModelConfig, u32 entry count,
///   per entry: u32 name length, name bytes, u32 rank (=4), u32 dims[4],
///              f32 payload;
///   u32 CRC-32 of every preceding byte.
template <typename T>
void save_checkpoint(const Model<T> &model, const std::string &path) {
    detail::ByteWriter w;
    w.u32(detail::kCheckpointMagic);
    w.u32(detail::kCheckpointVersion);
    detail::write_config(w, model.config);
    w.u32(uint32_t(model.params.entries().size()));
    for (const auto &e : model.params.entries()) {
        w.u32(uint32_t(e.name.size()));
        w.bytes(e.name.data(), e.name.size());
        const Tensor4<T> &t = e.var.value();
        w.u32(4);
        w.u32(uint32_t(t.n));
        w.u32(uint32_t(t.c));
        w.u32(uint32_t(t.h));
        w.u32(uint32_t(t.w));
        for (int64_t i = 0; i < t.size(); ++i) w.f32(static_cast<float>(t.data[i]));
    }
    w.u32(detail::crc32(w.buf.data(), w.buf.size()));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot write " + path);
    f.write(reinterpret_cast<const char *>(w.buf.data()),
            static_cast<std::streamsize>(w.buf.size()));
    if (!f) throw IoError("checkpoint: short write to " + path);
}

/// Config stored in a checkpoint, for building a matching model first.
inline ModelConfig read_checkpoint_config(const std::string &path) {
    auto bytes = detail::read_file_validated(path);
    detail::ByteReader r{bytes};
    if (r.u32() != detail::kCheckpointMagic) throw IoError("checkpoint: bad magic");
    if (r.u32() != detail::kCheckpointVersion) throw IoError("checkpoint: unsupported version");
    return detail::read_config(r);
}

/// Load parameters into an already-built model. The stored config and every
/// entry's name and shape must agree with the model.
template <typename T>
void load_checkpoint(Model<T> &model, const std::string &path) {
    auto bytes = detail::read_file_validated(path);
    detail::ByteReader r{bytes};
    if (r.u32() != detail::kCheckpointMagic) throw IoError("checkpoint: bad magic");
    if (r.u32() != detail::kCheckpointVersion) throw IoError("checkpoint: unsupported version");
    ModelConfig cfg = detail::read_config(r);
    if (!(cfg == model.config))
        throw IoError("checkpoint: stored config does not match the model");
    const uint32_t count = r.u32();
    if (count != model.params.entries().size())
        throw IoError("checkpoint: parameter count mismatch");
    for (auto &e : model.params.entries()) {
        const std::string name = r.str(r.u32());
        if (name != e.name)
            throw IoError("checkpoint: parameter order mismatch at " + name);
        if (r.u32() != 4) throw IoError("checkpoint: unexpected tensor rank");
        Tensor4<T> &t = e.var.value();
        const int dims[4] = {int(r.u32()), int(r.u32()), int(r.u32()), int(r.u32())};
        if (dims[0] != t.n || dims[1] != t.c || dims[2] != t.h || dims[3] != t.w)
            throw IoError("checkpoint: shape mismatch for " + name);
        for (int64_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<T>(r.f32());
    }
}

} // namespace slpnet
