#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace scenedet {

// Deterministic RNG used everywhere; never std::uniform_real_distribution,
// whose output is not pinned down by the standard across implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; draws two uniforms per call and keeps only one so that the
    // consumed stream length is independent of call parity.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();  // log(0) guard, practically unreachable
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform integer in [0, n); n must be positive.
    std::uint64_t index(std::uint64_t n) { return std::uint64_t(uniform() * double(n)) % n; }

    std::uint64_t raw() { return gen_(); }

  private:
    std::mt19937_64 gen_;
};

// FNV-1a, used for stable string hashing (dataset splits, config digests).
inline std::uint64_t fnv1a(const void* data, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

// Derives an independent per-item stream from a base seed and an item index.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t item) {
    std::uint64_t buf[2] = {base, item};
    return fnv1a(buf, sizeof buf);
}

}  // namespace scenedet
