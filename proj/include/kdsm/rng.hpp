#pragma once

#include <cstdint>
#include <string_view>

namespace kdsm {

/// Counter-based deterministic RNG (splitmix64). Every random draw in the
/// project goes through this generator so that results are bit-identical
/// across runs and platforms; std:: distributions are implementation-defined
/// and must not be used.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    /// Unbiased-enough integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    /// Approximate standard normal via a 12-uniform Irwin-Hall sum.
    /// Chosen over Box-Muller to avoid libm calls: bit-reproducible anywhere.
    double gaussian() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += uniform();
        return s - 6.0;
    }

private:
    std::uint64_t state_;
};

/// 64-bit FNV-1a hash of a byte string.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derive an independent stream seed from a base seed and stream tags.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b,
                              std::uint64_t c = 0) {
    SplitMix64 m(a ^ (b * 0x9e3779b97f4a7c15ULL) ^
                 (c * 0xc2b2ae3d27d4eb4fULL));
    m.next();
    return m.next();
}

} // namespace kdsm
