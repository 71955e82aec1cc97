#ifndef DR_RNG_HPP
#define DR_RNG_HPP

#include <array>
#include <cmath>
#include <cstdint>

namespace dr {

// Philox4x32-10 counter-based generator (Salmon et al., "Parallel Random
// Numbers: As Easy as 1, 2, 3"). Stateless core: a 128-bit counter and a
// 64-bit key map to 128 output bits. All randomness in this project flows
// through this block so runs are reproducible from (seed, stream) alone.
struct philox4x32 {
    static constexpr uint32_t M0 = 0xD2511F53u;
    static constexpr uint32_t M1 = 0xCD9E8D57u;
    static constexpr uint32_t W0 = 0x9E3779B9u;
    static constexpr uint32_t W1 = 0xBB67AE85u;

    static std::array<uint32_t, 4> block(std::array<uint32_t, 4> ctr, std::array<uint32_t, 2> key) {
        for (int round = 0; round < 10; round++) {
            uint64_t p0 = (uint64_t)M0 * ctr[0];
            uint64_t p1 = (uint64_t)M1 * ctr[2];
            uint32_t hi0 = (uint32_t)(p0 >> 32), lo0 = (uint32_t)p0;
            uint32_t hi1 = (uint32_t)(p1 >> 32), lo1 = (uint32_t)p1;
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += W0;
            key[1] += W1;
        }
        return ctr;
    }
};

// Sequential view over the Philox stream. key = (seed_lo ^ seed_hi<<32
// folded, stream); counter = running block index. split() derives an
// independent stream without touching this one.
class rng {
public:
    rng(uint64_t seed, uint64_t stream = 0)
        : key_{(uint32_t)(seed & 0xffffffffu), (uint32_t)(seed >> 32)},
          stream_(stream),
          block_(0),
          have_(0) {}

    rng split(uint64_t substream) const {
        // Mix the substream into a fresh key through one Philox block so
        // derived streams do not collide with sequential ones.
        auto mixed = philox4x32::block(
            {(uint32_t)(substream & 0xffffffffu), (uint32_t)(substream >> 32),
             (uint32_t)(stream_ & 0xffffffffu), (uint32_t)(stream_ >> 32)},
            key_);
        rng r(0, 0);
        r.key_ = {mixed[0], mixed[1]};
        r.stream_ = ((uint64_t)mixed[2] << 32) | mixed[3];
        return r;
    }

    uint32_t next_u32() {
        if (have_ == 0) {
            buf_ = philox4x32::block(
                {(uint32_t)(block_ & 0xffffffffu), (uint32_t)(block_ >> 32),
                 (uint32_t)(stream_ & 0xffffffffu), (uint32_t)(stream_ >> 32)},
                key_);
            block_++;
            have_ = 4;
        }
        return buf_[4 - have_--];
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform in (0, 1]: (x + 1) * 2^-32. Never returns 0 so it is safe
    // under log().
    double next_uniform() {
        return ((double)next_u32() + 1.0) * (1.0 / 4294967296.0);
    }

    // Standard normal via Box-Muller. Both outputs of a pair are consumed
    // before the next uniforms are drawn.
    double next_gaussian() {
        if (have_gauss_) {
            have_gauss_ = false;
            return spare_;
        }
        double u1 = next_uniform();
        double u2 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_gauss_ = true;
        return r * std::cos(a);
    }

    float next_gaussian_f() { return (float)next_gaussian(); }

    // Uniform integer in [0, n) by rejection-free multiply-shift; n <= 2^32-1.
    uint32_t next_below(uint32_t n) {
        return (uint32_t)(((uint64_t)next_u32() * n) >> 32);
    }

private:
    std::array<uint32_t, 2> key_;
    uint64_t stream_;
    uint64_t block_;
    int have_;
    std::array<uint32_t, 4> buf_{};
    bool have_gauss_ = false;
    double spare_ = 0.0;
};

}  // namespace dr

#endif
