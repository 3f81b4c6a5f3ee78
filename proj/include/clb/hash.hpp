#pragma once

#include <bit>
#include <cstdint>
#include <cstddef>
#include <string>

namespace clb {

// Incremental FNV-1a 64-bit hash. Used for stream content hashes; not
// cryptographic, just a stable fingerprint.
class Fnv1a64 {
  public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ull;
        }
    }

    void update_u8(std::uint8_t v) { update(&v, 1); }

    void update_u32(std::uint32_t v) {
        std::uint8_t b[4] = {
            static_cast<std::uint8_t>(v),
            static_cast<std::uint8_t>(v >> 8),
            static_cast<std::uint8_t>(v >> 16),
            static_cast<std::uint8_t>(v >> 24),
        };
        update(b, 4);
    }

    void update_i32(std::int32_t v) {
        update_u32(static_cast<std::uint32_t>(v));
    }

    void update_u64(std::uint64_t v) {
        update_u32(static_cast<std::uint32_t>(v));
        update_u32(static_cast<std::uint32_t>(v >> 32));
    }

    void update_f32(float v) { update_u32(std::bit_cast<std::uint32_t>(v)); }

    void update_f64(double v) { update_u64(std::bit_cast<std::uint64_t>(v)); }

    std::uint64_t digest() const { return h_; }

  private:
    std::uint64_t h_ = 0xcbf29ce484222325ull;
};

// Lowercase 16-digit hex rendering of a 64-bit value.
inline std::string hex_u64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace clb
