#ifndef D2G_CORE_DIGEST_HPP
#define D2G_CORE_DIGEST_HPP

#include <openssl/sha.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace d2g {

using Digest = std::array<uint8_t, 32>;

inline Digest sha256(const void* data, size_t len) {
    Digest d{};
    SHA256(static_cast<const unsigned char*>(data), len, d.data());
    return d;
}

inline Digest sha256(const std::vector<uint8_t>& v) { return sha256(v.data(), v.size()); }

inline std::string hex(const Digest& d) {
    static const char* k = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (uint8_t b : d) {
        s.push_back(k[b >> 4]);
        s.push_back(k[b & 15]);
    }
    return s;
}

}  // namespace d2g

#endif
