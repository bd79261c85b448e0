#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>

namespace ldbp {

/// splitmix64; used to derive statistically independent sub-seeds from a
/// master seed plus a purpose tag.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    return mix_seed(seed + 0x632be59bd9b4e019ULL * (tag + 1));
}

/// PCG XSL RR 128/64 (pcg64). Reference constants from the PCG family
/// description; 128-bit LCG state, output is the xor-folded state
/// rotated by the top bits. Distinct odd increments select independent
/// streams for the same seed.
class Pcg64 {
public:
    using state_t = unsigned __int128;

    explicit Pcg64(std::uint64_t seed, std::uint64_t stream = 0) {
        inc_ = ((state_t(mix_seed(stream, 0x5eedu)) << 64 | stream) << 1) | 1;
        state_ = 0;
        advance_();
        state_ += (state_t(seed) << 64) | mix_seed(seed);
        advance_();
    }

    std::uint64_t next() {
        advance_();
        const std::uint64_t xored = static_cast<std::uint64_t>(state_ >> 64) ^
                                    static_cast<std::uint64_t>(state_);
        const unsigned rot = static_cast<unsigned>(state_ >> 122);
        return (xored >> rot) | (xored << ((-rot) & 63u));
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1p-53; }

    /// Uniform integer in [0, bound) via high-bits scaling (bound must fit
    /// comfortably below 2^32 for negligible bias; bounds here are tiny).
    std::uint64_t bounded(std::uint64_t bound) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next()) * bound) >> 64);
    }

    /// Standard normal via Box-Muller (explicit so results do not depend on
    /// the standard library's distribution implementation).
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = static_cast<double>((next() >> 11) + 1) * 0x1p-53;  // (0,1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    static constexpr const char* id() { return "pcg64-xsl-rr-128/64"; }

private:
    void advance_() { state_ = state_ * mult_() + inc_; }

    static constexpr state_t mult_() {
        return (state_t(0x2360ed051fc65da4ULL) << 64) | 0x4385df649fccf645ULL;
    }

    state_t state_ = 0;
    state_t inc_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ldbp
