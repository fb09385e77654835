#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hpun/tensor.hpp"

namespace hpun {

// Flat tensor dump format, little-endian, 16-byte header:
//   bytes 0-3   magic "HPT0"
//   bytes 4-5   dtype code (u16 LE): 1 = f32, 2 = f64
//   bytes 6-7   format version (u16 LE), currently 1
//   bytes 8-15  dims n, c, h, w as u16 LE each
// followed by n*c*h*w little-endian floats of the stated width.
// Dims are limited to 65535; see docs/FORMATS.md.

namespace detail {

inline void put_u16(std::string& s, uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline uint16_t get_u16(const char* p) {
    return static_cast<uint16_t>(static_cast<unsigned char>(p[0]) |
                                 (static_cast<unsigned char>(p[1]) << 8));
}
inline uint32_t get_u32(const char* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

template <class T>
constexpr uint16_t dtype_code() {
    return sizeof(T) == 4 ? 1 : 2;
}

}  // namespace detail

template <class T>
std::string dump_tensor(const Tensor<T>& t) {
    check_shape(t.shape.n <= 0xffff && t.shape.c <= 0xffff && t.shape.h <= 0xffff &&
                    t.shape.w <= 0xffff,
                "dump_tensor: dims exceed the u16 limit of the format");
    std::string s;
    s.reserve(16 + t.numel() * sizeof(T));
    s += "HPT0";
    detail::put_u16(s, detail::dtype_code<T>());
    detail::put_u16(s, 1);
    detail::put_u16(s, static_cast<uint16_t>(t.shape.n));
    detail::put_u16(s, static_cast<uint16_t>(t.shape.c));
    detail::put_u16(s, static_cast<uint16_t>(t.shape.h));
    detail::put_u16(s, static_cast<uint16_t>(t.shape.w));
    s.append(reinterpret_cast<const char*>(t.ptr()), t.numel() * sizeof(T));
    return s;
}

// Parses one tensor blob starting at offset `off`; advances `off` past it.
// Converts between float widths when the stored dtype differs from T.
template <class T>
Tensor<T> parse_tensor(const std::string& buf, size_t& off) {
    if (buf.size() < off + 16 || buf.compare(off, 4, "HPT0") != 0)
        throw DataError("tensor blob: corrupt or truncated header");
    const uint16_t dtype = detail::get_u16(buf.data() + off + 4);
    if (dtype != 1 && dtype != 2) throw DataError("tensor blob: unknown dtype code");
    Shape4 s;
    s.n = detail::get_u16(buf.data() + off + 8);
    s.c = detail::get_u16(buf.data() + off + 10);
    s.h = detail::get_u16(buf.data() + off + 12);
    s.w = detail::get_u16(buf.data() + off + 14);
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
        throw DataError("tensor blob: zero dimension in header");
    const size_t width = dtype == 1 ? 4 : 8;
    const size_t bytes = static_cast<size_t>(s.numel()) * width;
    if (buf.size() < off + 16 + bytes) throw DataError("tensor blob: truncated payload");
    Tensor<T> t = zeros<T>(s);
    const char* p = buf.data() + off + 16;
    for (int64_t i = 0; i < s.numel(); ++i) {
        if (dtype == 1) {
            float v;
            std::memcpy(&v, p + i * 4, 4);
            (*t.data)[i] = static_cast<T>(v);
        } else {
            double v;
            std::memcpy(&v, p + i * 8, 8);
            (*t.data)[i] = static_cast<T>(v);
        }
    }
    off += 16 + bytes;
    return t;
}

// All file outputs go through temp-file + rename so partial writes are
// never observed under the final name.
inline void atomic_write_file(const std::string& path, const std::string& contents) {
    namespace fs = std::filesystem;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot open for writing: " + tmp);
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw DataError("write failed: " + tmp);
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

template <class T>
void save_tensor_file(const Tensor<T>& t, const std::string& path) {
    atomic_write_file(path, dump_tensor(t));
}

template <class T>
Tensor<T> load_tensor_file(const std::string& path) {
    const std::string buf = read_file(path);
    size_t off = 0;
    return parse_tensor<T>(buf, off);
}

}  // namespace hpun
