#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace promptforge {

// FNV-1a, used for substream derivation and config fingerprints.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), seed);
}

std::string hex64(uint64_t v);

// CRC-32 (IEEE 802.3 polynomial), used by the weight/image file formats.
class Crc32 {
public:
    Crc32() = default;

    void update(const void* data, size_t len);
    uint32_t value() const { return state_ ^ 0xffffffffu; }

    static uint32_t of(const void* data, size_t len) {
        Crc32 c;
        c.update(data, len);
        return c.value();
    }

private:
    uint32_t state_ = 0xffffffffu;
};

}  // namespace promptforge
