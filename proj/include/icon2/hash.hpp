#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace icon2 {

// FNV-1a, 64-bit. Used for provenance hashes and stage caching, not security.
class Fnv1a64 {
public:
    Fnv1a64& update(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
        return *this;
    }

    Fnv1a64& update(std::string_view s) { return update(s.data(), s.size()); }

    Fnv1a64& update_u64(uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        return update(b, 8);
    }

    uint64_t value() const { return state_; }

    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
        return std::string(buf);
    }

private:
    uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string fnv1a64_hex(std::string_view s) {
    Fnv1a64 h;
    h.update(s);
    return h.hex();
}

}  // namespace icon2
