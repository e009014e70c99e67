#ifndef WSSL_RNG_HPP
#define WSSL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace wssl {

// Seeded RNG wrapper. The engine (mt19937_64) is fully specified by the
// standard; the distribution mappings below are hand-rolled because the
// std::*_distribution output sequences are implementation-defined, and
// run results must be reproducible across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, n), n >= 1. Rejection-sampled, unbiased.
    std::uint64_t below(std::uint64_t n) {
        std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t v = engine_();
            if (v >= threshold) return v % n;
        }
    }

    // Fisher-Yates; std::shuffle is implementation-defined.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Deterministic sub-seed derivation: splitmix64 over the base seed mixed
// with a tag and counter, so independent streams never alias.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t counter = 0) {
    std::uint64_t x = base ^ 0x9e3779b97f4a7c15ULL;
    auto mix = [&x](std::uint64_t v) {
        x += v + 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        x = z ^ (z >> 31);
    };
    for (char c : tag) mix(static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
    mix(counter);
    return x;
}

} // namespace wssl

#endif
