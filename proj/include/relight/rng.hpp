#ifndef RELIGHT_RNG_HPP
#define RELIGHT_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace relight {

/// SplitMix64 finalizer, used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) noexcept
{
    std::uint64_t s = mix64(base);
    for (auto k : keys)
        s = mix64(s ^ mix64(k + 0x632be59bd9b4e019ULL));
    return s;
}

/// Seeded generator. Distributions are implemented here rather than through
/// <random> so sequences do not depend on the standard library vendor.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n)
    {
        // Lemire's multiply-shift with rejection.
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t x = engine_();
            const unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
            if (static_cast<std::uint64_t>(m) >= threshold)
                return static_cast<std::uint64_t>(m >> 64);
        }
    }

    /// Standard normal via Box-Muller.
    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace relight

#endif // RELIGHT_RNG_HPP
