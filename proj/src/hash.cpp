#include "promptforge/hash.hpp"

#include <array>

namespace promptforge {

std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

namespace {

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) {
            c = (c & 1u) ? 0xedb88320u ^ (c >> 1) : (c >> 1);
        }
        table[i] = c;
    }
    return table;
}

}  // namespace

void Crc32::update(const void* data, size_t len) {
    static const std::array<uint32_t, 256> table = make_crc_table();
    const auto* p = static_cast<const unsigned char*>(data);
    uint32_t c = state_;
    for (size_t i = 0; i < len; ++i) {
        c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
    }
    state_ = c;
}

}  // namespace promptforge
