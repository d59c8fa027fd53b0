#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>

namespace rffi {

// splitmix64 step; doubles as the seed-mixing kernel below.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Seed derivation rule used everywhere a per-item stream is needed:
// the augmentation seed of packet i in epoch e is derive_seed(base, e, i).
// Deterministic, order-free, and independent of worker count.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t s = base;
    std::uint64_t h = splitmix64_next(s);
    s = h ^ (a * 0xff51afd7ed558ccdull + 0x2545f4914f6cdd1dull);
    h = splitmix64_next(s);
    s = h ^ (b * 0xc4ceb9fe1a85ec53ull + 0x9e3779b97f4a7c15ull);
    return splitmix64_next(s);
}

// Self-contained generator with explicit, portable conversions. The standard
// <random> distributions are implementation-defined, which would make corpus
// bytes depend on the standard library; these do not.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64_next(state_); }

    // [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    // Box-Muller; the spare value is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Circularly-symmetric complex Gaussian with E|z|^2 = 1.
    std::complex<double> cnormal() {
        const double x = normal();
        const double y = normal();
        return {x * std::numbers::sqrt2 / 2.0, y * std::numbers::sqrt2 / 2.0};
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace rffi
