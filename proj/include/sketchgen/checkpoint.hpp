#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace sketchgen {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'M', 'G', 'M', 'S'};

// Named tensor records in canonical (lexicographic) order. Every value in a
// checkpoint is a tensor record, including scalar config entries.
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::map<std::string, Tensor> tensors;

    bool has(const std::string& name) const { return tensors.count(name) > 0; }

    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw load_error("checkpoint: missing tensor record '" + name + "'");
        return it->second;
    }

    double scalar(const std::string& name) const {
        const Tensor& t = at(name);
        if (t.numel() != 1)
            throw load_error("checkpoint: record '" + name + "' is not scalar");
        return t.data()[0];
    }

    void put(const std::string& name, const Tensor& t) { tensors[name] = t; }

    void put_scalar(const std::string& name, double v) {
        // Stored as float32 like every payload; scalars must survive that.
        tensors[name] = Tensor::scalar(static_cast<double>(static_cast<float>(v)));
    }
};

namespace detail {

inline void write_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_f32(std::ofstream& f, float v) {
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, 4);
    write_u32(f, bits);
}

struct Reader {
    std::vector<char> buf;
    size_t pos = 0;

    bool eof() const { return pos >= buf.size(); }

    void need(size_t n, const char* what) const {
        if (buf.size() - pos < n)
            throw load_error(std::string("checkpoint: truncated while reading ") + what,
                             static_cast<long long>(pos));
    }

    std::uint32_t read_u32(const char* what) {
        need(4, what);
        const unsigned char* b = reinterpret_cast<const unsigned char*>(buf.data() + pos);
        pos += 4;
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    float read_f32(const char* what) {
        const std::uint32_t bits = read_u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("save_checkpoint: cannot open " + path);
    f.write(kCheckpointMagic, 4);
    detail::write_u32(f, ckpt.version);
    for (const auto& [name, tensor] : ckpt.tensors) {  // std::map -> canonical order
        detail::write_u32(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(f, static_cast<std::uint32_t>(tensor.rank()));
        for (int i = 0; i < tensor.rank(); ++i)
            detail::write_u32(f, static_cast<std::uint32_t>(tensor.dim(i)));
        for (double v : tensor.data()) detail::write_f32(f, static_cast<float>(v));
    }
    if (!f) throw io_error("save_checkpoint: short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw load_error("load_checkpoint: cannot open " + path);
    detail::Reader r;
    r.buf.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    r.need(4, "magic");
    if (std::memcmp(r.buf.data(), kCheckpointMagic, 4) != 0)
        throw load_error("load_checkpoint: bad magic bytes", 0);
    r.pos = 4;
    Checkpoint ckpt;
    ckpt.version = r.read_u32("version");
    if (ckpt.version != kCheckpointVersion)
        throw load_error("load_checkpoint: format version " + std::to_string(ckpt.version) +
                             ", expected " + std::to_string(kCheckpointVersion),
                         4);
    while (!r.eof()) {
        const std::uint32_t name_len = r.read_u32("record name length");
        r.need(name_len, "record name");
        std::string name(r.buf.data() + r.pos, name_len);
        r.pos += name_len;
        const std::uint32_t rank = r.read_u32("record rank");
        if (rank > 8) throw load_error("load_checkpoint: implausible rank for '" + name + "'",
                                       static_cast<long long>(r.pos) - 4);
        Shape shape;
        long long count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint32_t d = r.read_u32("record dims");
            shape.push_back(static_cast<int>(d));
            count *= d;
        }
        std::vector<double> data(static_cast<size_t>(count));
        for (long long i = 0; i < count; ++i)
            data[static_cast<size_t>(i)] = static_cast<double>(r.read_f32("record payload"));
        ckpt.tensors[name] = Tensor::from_data(std::move(shape), std::move(data));
    }
    return ckpt;
}

}  // namespace sketchgen
