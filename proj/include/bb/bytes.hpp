#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace bb {

using Bytes = std::vector<uint8_t>;
using ByteView = std::span<const uint8_t>;

// All multi-byte integers on the wire are big-endian.
inline void put_u8(Bytes& b, uint8_t v) { b.push_back(v); }

inline void put_u16(Bytes& b, uint16_t v) {
    b.push_back(uint8_t(v >> 8));
    b.push_back(uint8_t(v));
}

inline void put_u32(Bytes& b, uint32_t v) {
    b.push_back(uint8_t(v >> 24));
    b.push_back(uint8_t(v >> 16));
    b.push_back(uint8_t(v >> 8));
    b.push_back(uint8_t(v));
}

inline void put_u64(Bytes& b, uint64_t v) {
    put_u32(b, uint32_t(v >> 32));
    put_u32(b, uint32_t(v));
}

inline uint16_t get_u16(const uint8_t* p) {
    return uint16_t(uint16_t(p[0]) << 8 | p[1]);
}

inline uint32_t get_u32(const uint8_t* p) {
    return uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 | uint32_t(p[2]) << 8 | uint32_t(p[3]);
}

inline uint64_t get_u64(const uint8_t* p) {
    return uint64_t(get_u32(p)) << 32 | get_u32(p + 4);
}

inline std::string to_hex(ByteView data) {
    static const char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

inline Bytes from_hex(const std::string& hex) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    Bytes out;
    out.reserve(hex.size() / 2);
    for (size_t i = 0; i + 1 < hex.size(); i += 2) {
        int hi = nibble(hex[i]), lo = nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) break;
        out.push_back(uint8_t(hi << 4 | lo));
    }
    return out;
}

}  // namespace bb
