#ifndef DR_COMMON_HPP
#define DR_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dr {

// Thrown when a latent or loss goes non-finite. Maps to exit code 3.
struct divergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File / format problems. Maps to exit code 4.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration (unknown key, invalid value). Maps to exit code 2.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; i++) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), seed);
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; i--) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace dr

#endif
