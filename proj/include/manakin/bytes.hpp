#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

namespace manakin {

using Bytes = std::vector<std::uint8_t>;

inline void put_u32(Bytes &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

inline void put_u64(Bytes &out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

inline void put_i32(Bytes &out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }
inline void put_i64(Bytes &out, std::int64_t v) { put_u64(out, static_cast<std::uint64_t>(v)); }

inline void put_bytes(Bytes &out, std::span<const std::uint8_t> data) {
    put_u64(out, data.size());
    out.insert(out.end(), data.begin(), data.end());
}

// Sequential little-endian reader; all read_* throw std::out_of_range past the end.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : m_data(data) {}

    std::uint8_t read_u8() {
        need(1);
        return m_data[m_pos++];
    }

    std::uint32_t read_u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(m_data[m_pos + i]) << (8 * i);
        }
        m_pos += 4;
        return v;
    }

    std::uint64_t read_u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(m_data[m_pos + i]) << (8 * i);
        }
        m_pos += 8;
        return v;
    }

    std::int32_t read_i32() { return static_cast<std::int32_t>(read_u32()); }
    std::int64_t read_i64() { return static_cast<std::int64_t>(read_u64()); }

    Bytes read_bytes() {
        const std::uint64_t n = read_u64();
        need(n);
        Bytes out(m_data.begin() + static_cast<std::ptrdiff_t>(m_pos),
                  m_data.begin() + static_cast<std::ptrdiff_t>(m_pos + n));
        m_pos += n;
        return out;
    }

    std::span<const std::uint8_t> read_span(std::size_t n) {
        need(n);
        auto s = m_data.subspan(m_pos, n);
        m_pos += n;
        return s;
    }

    std::size_t pos() const { return m_pos; }
    std::size_t remaining() const { return m_data.size() - m_pos; }
    bool at_end() const { return m_pos == m_data.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > m_data.size() - m_pos) {
            throw std::out_of_range("ByteReader: truncated input");
        }
    }

    std::span<const std::uint8_t> m_data;
    std::size_t m_pos = 0;
};

inline Bytes bytes_of_string(const std::string &s) {
    return Bytes(s.begin(), s.end());
}

inline std::string string_of_bytes(const Bytes &b) {
    return std::string(b.begin(), b.end());
}

// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> data,
                             std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (std::uint8_t b : data) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Streaming FNV-1a accumulator; workloads use it as their application state digest.
struct DigestAccumulator {
    std::uint64_t state = 0xcbf29ce484222325ULL;

    void add_byte(std::uint8_t b) {
        state ^= b;
        state *= 0x100000001b3ULL;
    }
    void add_bytes(std::span<const std::uint8_t> data) {
        for (std::uint8_t b : data) {
            add_byte(b);
        }
    }
    void add_u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            add_byte(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
};

// CRC-32 (IEEE 802.3 polynomial, reflected), as used for the image trailer.
inline std::uint32_t crc32(std::span<const std::uint8_t> data) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) {
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
            }
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::uint8_t b : data) {
        crc = table[(crc ^ b) & 0xFFu] ^ (crc >> 8);
    }
    return crc ^ 0xFFFFFFFFu;
}

// splitmix64: the scheduler PRNG. Fully specified here so event sequences are
// reproducible across platforms and standard library versions.
struct SplitMix64 {
    std::uint64_t state = 0;

    explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

    std::uint64_t next() {
        state += 0x9E3779B97f4A7C15ULL;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, n) by rejection; n must be > 0.
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) {
                return r % n;
            }
        }
    }
};

} // namespace manakin
