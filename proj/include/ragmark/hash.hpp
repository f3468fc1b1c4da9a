#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace ragmark::hash {

inline std::uint32_t fnv1a32(std::string_view data) noexcept {
    std::uint32_t h = 0x811c9dc5u;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x01000193u;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ull) noexcept {
    std::uint64_t h = basis;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// splitmix64 finalizer; spreads FNV output across all bits.
inline std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t seeded64(std::string_view data, std::uint64_t seed) noexcept {
    return mix64(fnv1a64(data, 0xcbf29ce484222325ull ^ mix64(seed)));
}

inline std::string hex32(std::uint32_t value) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", value);
    return buf;
}

inline std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    EVP_Digest(data.data(), data.size(), digest.data(), &length, EVP_sha256(), nullptr);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xf]);
    }
    return out;
}

} // namespace ragmark::hash
