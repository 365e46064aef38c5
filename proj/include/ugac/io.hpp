#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ugac/errors.hpp"
#include "ugac/tensor.hpp"

namespace ugac::io {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

// Raw tensor file (.rt): "UGRT" | u32 version | u32 dtype | u32 ndim |
// u64 dims[ndim] | float64 payload. Lossless, unlike 8-bit PNG.
constexpr std::uint32_t kRawVersion = 1;
constexpr std::uint32_t kDtypeF64 = 1;

namespace detail {

template <class T>
inline void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
inline T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError(std::string("truncated file while reading ") + what);
    return v;
}

inline void write_tensor_body(std::ostream& os, const Tensor& t) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

inline Tensor read_tensor_body(std::istream& is) {
    const auto ndim = read_pod<std::uint32_t>(is, "tensor rank");
    if (ndim > 8) throw DataError("tensor rank too large: " + std::to_string(ndim));
    Shape shape(ndim);
    for (auto& d : shape)
        d = static_cast<std::size_t>(read_pod<std::uint64_t>(is, "tensor dims"));
    const std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw DataError("truncated tensor payload");
    return Tensor::from(std::move(data), std::move(shape));
}

inline void check_magic(std::istream& is, const char expect[4], const std::string& path) {
    char m[4];
    is.read(m, 4);
    if (!is || std::memcmp(m, expect, 4) != 0)
        throw DataError("bad magic in " + path);
}

} // namespace detail

/// Writes to a temp file in the same directory, then renames into place.
class AtomicFile {
public:
    explicit AtomicFile(const std::filesystem::path& target)
        : target_(target), tmp_(target.string() + ".tmp"),
          os_(tmp_, std::ios::binary | std::ios::trunc) {
        if (!os_) throw DataError("cannot open " + tmp_.string() + " for writing");
    }

    std::ostream& stream() { return os_; }

    void commit() {
        os_.flush();
        if (!os_) throw DataError("write failed for " + tmp_.string());
        os_.close();
        std::filesystem::rename(tmp_, target_);
        committed_ = true;
    }

    ~AtomicFile() {
        if (!committed_) {
            os_.close();
            std::error_code ec;
            std::filesystem::remove(tmp_, ec);
        }
    }

private:
    std::filesystem::path target_, tmp_;
    std::ofstream os_;
    bool committed_ = false;
};

inline void save_tensor_raw(const std::filesystem::path& path, const Tensor& t) {
    AtomicFile f(path);
    auto& os = f.stream();
    os.write("UGRT", 4);
    detail::write_pod<std::uint32_t>(os, kRawVersion);
    detail::write_pod<std::uint32_t>(os, kDtypeF64);
    detail::write_tensor_body(os, t);
    f.commit();
}

inline Tensor load_tensor_raw(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    detail::check_magic(is, "UGRT", path.string());
    const auto version = detail::read_pod<std::uint32_t>(is, "version");
    if (version != kRawVersion)
        throw DataError("unsupported raw tensor version " + std::to_string(version));
    const auto dtype = detail::read_pod<std::uint32_t>(is, "dtype");
    if (dtype != kDtypeF64) throw DataError("unsupported dtype tag " + std::to_string(dtype));
    return detail::read_tensor_body(is);
}

// Named-tensor container (.ugck): "UGCK" | u32 version | u32 meta_len |
// meta JSON | u32 count | { u32 name_len | name | tensor body } * count.
constexpr std::uint32_t kContainerVersion = 1;

struct Container {
    std::string meta; // JSON text, interpreted by the caller
    std::vector<std::pair<std::string, Tensor>> entries;
};

inline void save_container(const std::filesystem::path& path, const Container& c) {
    AtomicFile f(path);
    auto& os = f.stream();
    os.write("UGCK", 4);
    detail::write_pod<std::uint32_t>(os, kContainerVersion);
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.meta.size()));
    os.write(c.meta.data(), static_cast<std::streamsize>(c.meta.size()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.entries.size()));
    for (const auto& [name, t] : c.entries) {
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_tensor_body(os, t);
    }
    f.commit();
}

inline Container load_container(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    detail::check_magic(is, "UGCK", path.string());
    const auto version = detail::read_pod<std::uint32_t>(is, "version");
    if (version != kContainerVersion)
        throw DataError("unsupported container version " + std::to_string(version));
    Container c;
    const auto meta_len = detail::read_pod<std::uint32_t>(is, "meta length");
    c.meta.resize(meta_len);
    is.read(c.meta.data(), meta_len);
    if (!is) throw DataError("truncated container meta");
    const auto count = detail::read_pod<std::uint32_t>(is, "entry count");
    c.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_pod<std::uint32_t>(is, "entry name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw DataError("truncated entry name");
        c.entries.emplace_back(std::move(name), detail::read_tensor_body(is));
    }
    return c;
}

} // namespace ugac::io
