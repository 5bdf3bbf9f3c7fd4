#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace bptf {

namespace details {
/* splitmix64 finalizer; full-avalanche mix of a 64-bit word. */
inline std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
}

inline std::uint64_t fnv1a(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}
} // namespace details

/**
 * Derive a child seed from a base seed and a label. All randomness in the
 * toolkit flows from one master seed; modules split it by label (and by
 * index for homogeneous collections) so that adding a new consumer never
 * perturbs the draws of existing ones.
 */
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
    return details::mix64(base + 0x9e3779b97f4a7c15ULL * (details::fnv1a(label) | 1ULL));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return details::mix64(base + 0x9e3779b97f4a7c15ULL * (index + 0x632be59bd9b4e019ULL));
}

/**
 * Deterministic random stream. Wraps the standard-specified mt19937_64 bit
 * generator but derives all variates (uniform, normal) itself, so that a
 * fixed seed yields bit-identical sequences on every platform; the standard
 * library's distribution objects are implementation-defined and would break
 * the determinism contract.
 *
 * One stream must not be shared across concurrent callers.
 */
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /** Uniform draw in [0, 1) with 53 random bits. */
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /** Uniform draw in (0, 1); rejects exact zeros. */
    double open01() {
        double u;
        do {
            u = uniform01();
        } while (u == 0.0);
        return u;
    }

    /** Standard normal via the Marsaglia polar method (one value cached). */
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        cached_ = v * f;
        has_cached_ = true;
        return u * f;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /** Unbiased uniform integer in [0, n). */
    std::uint64_t below(std::uint64_t n) {
        assert(n > 0);
        const std::uint64_t q = UINT64_MAX / n;
        const std::uint64_t limit = n * q;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x / q;
    }

  private:
    std::mt19937_64 gen_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

} // namespace bptf
