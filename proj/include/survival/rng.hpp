#ifndef SURVIVAL_RNG_HPP
#define SURVIVAL_RNG_HPP

#include <cstdint>
#include <limits>

namespace survival {

/// SplitMix64 step; used both to expand seeds and to derive child streams.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept
{
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// xoshiro256** with SplitMix64 seeding. Satisfies UniformRandomBitGenerator,
/// so it can also drive <random> distributions. `split()` derives an
/// independent child stream without disturbing reproducibility of the parent.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) noexcept { reseed(seed); }

    void reseed(std::uint64_t seed) noexcept
    {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept
    {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 bits of resolution.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
    std::uint64_t below(std::uint64_t n) noexcept
    {
        if (n == 0) return 0;
        unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<unsigned __int128>((*this)()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Child stream: seeded from two parent draws mixed with a stream tag.
    Rng split(std::uint64_t tag = 0) noexcept
    {
        std::uint64_t mix = (*this)() ^ (tag * 0xD1B54A32D192ED03ULL);
        return Rng(splitmix64(mix) ^ (*this)());
    }

    friend bool operator==(const Rng& a, const Rng& b) noexcept
    {
        for (int i = 0; i < 4; ++i)
            if (a.s_[i] != b.s_[i]) return false;
        return true;
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept
    {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4]{};
};

/// Deterministic seed derivation for named sub-streams (e.g. "eval", run seed, update index).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) noexcept
{
    std::uint64_t s = base ^ (a * 0x9E3779B97F4A7C15ULL);
    std::uint64_t x = splitmix64(s);
    s = x ^ (b * 0xC2B2AE3D27D4EB4FULL);
    return splitmix64(s);
}

} // namespace survival

#endif
