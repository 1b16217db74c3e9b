#pragma once

// Binary parameter container.
//
//   offset  field
//   0       magic "AGAN" (4 bytes)
//   4       format version, u32
//   8       tensor count, u32
//   then per tensor:
//           name length u32, name bytes (UTF-8, no terminator)
//           rank u32, rank x dimension u64
//           payload: product(dims) x f64
// Every integer and float is little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "activegan/error.hpp"
#include "activegan/models.hpp"
#include "activegan/tensor.hpp"

namespace activegan {

inline constexpr char kContainerMagic[4] = {'A', 'G', 'A', 'N'};
inline constexpr std::uint32_t kContainerVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class ByteReader {
public:
    explicit ByteReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

    std::size_t offset() const noexcept { return pos_; }

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw LengthError(std::string("container truncated while reading ") + what, pos_);
        }
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    std::string text(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_container(const NamedTensors& tensors) {
    std::vector<unsigned char> out(std::begin(kContainerMagic), std::end(kContainerMagic));
    detail::put_u32(out, kContainerVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) detail::put_u64(out, d);
        for (double v : t.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

inline NamedTensors decode_container(const std::vector<unsigned char>& bytes) {
    detail::ByteReader in(bytes);
    in.need(4, "magic");
    if (std::memcmp(bytes.data(), kContainerMagic, 4) != 0) throw FormatError("bad container magic", 0);
    (void)in.text(4, "magic");
    const std::size_t version_at = in.offset();
    const std::uint32_t version = in.u32("version");
    if (version != kContainerVersion) {
        throw FormatError("unsupported container version " + std::to_string(version), version_at);
    }
    const std::uint32_t count = in.u32("tensor count");
    NamedTensors out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = in.u32("name length");
        std::string name = in.text(name_len, "name");
        const std::size_t rank_at = in.offset();
        const std::uint32_t rank = in.u32("rank");
        if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), rank_at);
        Shape shape(rank);
        std::uint64_t total = 1;
        for (auto& d : shape) {
            const std::size_t dim_at = in.offset();
            const std::uint64_t dim = in.u64("dimension");
            if (dim != 0 && total > (bytes.size() / 8) / dim) {
                throw LengthError("tensor '" + name + "' larger than the container", dim_at);
            }
            total *= dim;
            d = static_cast<std::size_t>(dim);
        }
        in.need(total * 8, "payload");
        std::vector<double> values(total);
        for (auto& v : values) v = std::bit_cast<double>(in.u64("payload"));
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (in.offset() != bytes.size()) throw FormatError("trailing bytes after last tensor", in.offset());
    return out;
}

inline void write_container(const std::string& path, const NamedTensors& tensors) {
    const auto bytes = encode_container(tensors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + path);
}

inline NamedTensors read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_container(bytes);
}

// Appends a parameter set with every name prefixed.
inline void append_params(NamedTensors& out, const std::string& prefix, const ParameterSet& params) {
    for (std::size_t i = 0; i < params.tensors.size(); ++i) out.emplace_back(prefix + params.names[i], params.tensors[i]);
}

// Copies tensors named prefix+name back into params, checking shapes.
inline void restore_params(const NamedTensors& in, const std::string& prefix, ParameterSet& params) {
    std::map<std::string, const Tensor*> index;
    for (const auto& [name, t] : in) index[name] = &t;
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        const auto it = index.find(prefix + params.names[i]);
        if (it == index.end()) throw FormatError("container is missing tensor '" + prefix + params.names[i] + "'");
        if (it->second->shape() != params.tensors[i].shape()) {
            throw ShapeError("tensor '" + it->first + "' has shape " + shape_string(it->second->shape()) +
                             ", expected " + shape_string(params.tensors[i].shape()));
        }
        params.tensors[i] = *it->second;
    }
}

inline const Tensor& find_tensor(const NamedTensors& in, const std::string& name) {
    for (const auto& [n, t] : in) {
        if (n == name) return t;
    }
    throw FormatError("container is missing tensor '" + name + "'");
}

}  // namespace activegan
