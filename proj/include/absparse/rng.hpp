#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace absparse {

// SplitMix64 finalizer. Derives decorrelated per-stream seeds (one stream per
// head, per sample, ...) so parallel generation stays bitwise deterministic.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// mt19937_64 with hand-rolled uniform/gaussian transforms. The standard pins
// the engine output exactly; the distributions in <random> are
// implementation-defined, so we do not use them where traces must be
// reproducible byte for byte.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // bias is ~bound/2^64, irrelevant at the bounds used here
    std::uint64_t bounded(std::uint64_t bound) { return eng_() % bound; }

    double uniform() {  // in (0, 1]
        return static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53;
    }

    double gaussian() {  // Box-Muller
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

  private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace absparse
