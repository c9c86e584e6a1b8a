#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ssldg/errors.hpp"
#include "ssldg/tensor.hpp"

namespace ssldg {

// Binary tensor record: magic "SDG1", u32-LE rank, u32-LE dims, then the
// float64-LE payload in row-major order. Used for checkpoints and dataset
// files.

namespace detail {

inline void put_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64le(std::ostream& os, double d) {
    std::uint64_t v = std::bit_cast<std::uint64_t>(d);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32le(std::istream& is, std::size_t base) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw ParseError("tensor record truncated at byte " +
                         std::to_string(base + static_cast<std::size_t>(is.gcount())));
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline double get_f64le(std::istream& is, std::size_t base) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw ParseError("tensor record truncated at byte " +
                         std::to_string(base + static_cast<std::size_t>(is.gcount())));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("SDG1", 4);
    detail::put_u32le(os, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) detail::put_u32le(os, static_cast<std::uint32_t>(d));
    for (double v : t.values()) detail::put_f64le(os, v);
}

// `base` is the record's offset inside the stream, used only for error text.
inline Tensor read_tensor(std::istream& is, std::size_t base = 0) {
    char magic[4];
    if (!is.read(magic, 4))
        throw ParseError("tensor record truncated at byte " +
                         std::to_string(base + static_cast<std::size_t>(is.gcount())));
    if (std::memcmp(magic, "SDG1", 4) != 0)
        throw ParseError("bad tensor magic at byte " + std::to_string(base));
    std::size_t off = 4;
    const std::uint32_t rank = detail::get_u32le(is, base + off);
    off += 4;
    if (rank > 8) throw ParseError("implausible tensor rank at byte " + std::to_string(base + 4));
    Shape shape(rank);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = detail::get_u32le(is, base + off);
        off += 4;
        if (shape[i] == 0 || count > (1u << 30) / std::max<std::size_t>(1, shape[i]))
            throw ParseError("implausible tensor dims at byte " + std::to_string(base + 8));
        count *= shape[i];
    }
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        data[i] = detail::get_f64le(is, base + off);
        off += 8;
    }
    return Tensor::from(std::move(shape), std::move(data));
}

inline void write_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open for writing: " + path);
    write_tensor(os, t);
    if (!os) throw ParseError("write failed: " + path);
}

inline Tensor read_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open: " + path);
    return read_tensor(is, 0);
}

}  // namespace ssldg
