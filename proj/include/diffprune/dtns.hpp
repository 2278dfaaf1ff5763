// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "diffprune/tensor.hpp"

namespace diffprune {

// DTNS raw tensor format:
//   magic "DTNS" | u32 version=1 | u32 ndim | u64 dims[ndim] |
//   u8 dtype (0 = f32, 1 = f64) | payload, little-endian IEEE-754.
static_assert(std::endian::native == std::endian::little, "DTNS I/O assumes a little-endian host");

namespace detail {

template <typename U>
void write_le(std::ostream& os, U v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
    U v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!is) throw std::runtime_error("DTNS: truncated stream");
    return v;
}

template <typename T>
constexpr uint8_t dtns_dtype_code() {
    if constexpr (std::is_same_v<T, float>) return 0;
    else if constexpr (std::is_same_v<T, double>) return 1;
    else static_assert(sizeof(T) == 0, "DTNS supports f32/f64 only");
}

}  // namespace detail

template <typename T>
void write_dtns(std::ostream& os, const Tensor<T>& t) {
    os.write("DTNS", 4);
    detail::write_le<uint32_t>(os, 1);
    detail::write_le<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
    for (int64_t d : t.shape()) detail::write_le<uint64_t>(os, static_cast<uint64_t>(d));
    detail::write_le<uint8_t>(os, detail::dtns_dtype_code<T>());
    os.write(reinterpret_cast<const char*>(t.val().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!os) throw std::runtime_error("DTNS: write failed");
}

template <typename T>
void write_dtns(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("DTNS: cannot open for write: " + path);
    write_dtns(os, t);
}

template <typename T>
Tensor<T> read_dtns(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DTNS", 4) != 0) throw std::runtime_error("DTNS: bad magic");
    uint32_t version = detail::read_le<uint32_t>(is);
    if (version != 1) throw std::runtime_error("DTNS: unsupported version " + std::to_string(version));
    uint32_t ndim = detail::read_le<uint32_t>(is);
    if (ndim == 0 || ndim > 8) throw std::runtime_error("DTNS: bad ndim");
    Shape shape(ndim);
    for (auto& d : shape) {
        uint64_t v = detail::read_le<uint64_t>(is);
        if (v == 0 || v > (1ull << 40)) throw std::runtime_error("DTNS: bad dim");
        d = static_cast<int64_t>(v);
    }
    uint8_t dtype = detail::read_le<uint8_t>(is);
    if (dtype != detail::dtns_dtype_code<T>())
        throw std::runtime_error("DTNS: dtype mismatch (file has code " + std::to_string(int(dtype)) + ")");
    Tensor<T> t(shape);
    is.read(reinterpret_cast<char*>(t.val().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!is) throw std::runtime_error("DTNS: truncated payload");
    return t;
}

template <typename T>
Tensor<T> read_dtns(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("DTNS: cannot open: " + path);
    return read_dtns<T>(is);
}

}  // namespace diffprune
