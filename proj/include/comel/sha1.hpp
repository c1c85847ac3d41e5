#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>

namespace comel {

// Minimal SHA-1, enough to stamp runs and datasets with a content hash.
class Sha1 {
  public:
    Sha1() { reset(); }

    void reset() {
        h_ = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
        length_ = 0;
        buffer_fill_ = 0;
    }

    void update(const void* data, size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        length_ += len;
        while (len > 0) {
            const size_t take = std::min(len, sizeof(buffer_) - buffer_fill_);
            std::memcpy(buffer_ + buffer_fill_, p, take);
            buffer_fill_ += take;
            p += take;
            len -= take;
            if (buffer_fill_ == sizeof(buffer_)) {
                process(buffer_);
                buffer_fill_ = 0;
            }
        }
    }

    void update(const std::string& s) { update(s.data(), s.size()); }

    std::string hex_digest() {
        const std::uint64_t bits = length_ * 8;
        unsigned char pad = 0x80;
        update(&pad, 1);
        unsigned char zero = 0;
        while (buffer_fill_ != 56) update(&zero, 1);
        unsigned char len_be[8];
        for (int i = 0; i < 8; ++i) len_be[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
        update(len_be, 8);

        static const char* hex = "0123456789abcdef";
        std::string out;
        for (std::uint32_t word : h_) {
            for (int shift = 28; shift >= 0; shift -= 4) out.push_back(hex[(word >> shift) & 0xF]);
        }
        return out;
    }

  private:
    void process(const unsigned char* block) {
        std::uint32_t w[80];
        for (int i = 0; i < 16; ++i)
            w[i] = (std::uint32_t(block[4 * i]) << 24) | (std::uint32_t(block[4 * i + 1]) << 16) |
                   (std::uint32_t(block[4 * i + 2]) << 8) | std::uint32_t(block[4 * i + 3]);
        auto rol = [](std::uint32_t x, int n) { return (x << n) | (x >> (32 - n)); };
        for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);

        std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
        for (int i = 0; i < 80; ++i) {
            std::uint32_t f, k;
            if (i < 20) {
                f = (b & c) | (~b & d);
                k = 0x5A827999u;
            } else if (i < 40) {
                f = b ^ c ^ d;
                k = 0x6ED9EBA1u;
            } else if (i < 60) {
                f = (b & c) | (b & d) | (c & d);
                k = 0x8F1BBCDCu;
            } else {
                f = b ^ c ^ d;
                k = 0xCA62C1D6u;
            }
            const std::uint32_t tmp = rol(a, 5) + f + e + k + w[i];
            e = d;
            d = c;
            c = rol(b, 30);
            b = a;
            a = tmp;
        }
        h_[0] += a;
        h_[1] += b;
        h_[2] += c;
        h_[3] += d;
        h_[4] += e;
    }

    std::array<std::uint32_t, 5> h_;
    unsigned char buffer_[64];
    size_t buffer_fill_ = 0;
    std::uint64_t length_ = 0;
};

inline std::string sha1_hex(const std::string& data) {
    Sha1 h;
    h.update(data);
    return h.hex_digest();
}

}  // namespace comel
