#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace satnet {

// Self-contained xoshiro256** generator. The standard <random> distributions are
// implementation-defined, which would make "same seed, same bytes" guarantees
// non-portable; everything here is fully specified.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    int uniform_int(int n) { return static_cast<int>(uniform() * n); }

    /// Standard normal via Box-Muller.
    double normal() {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Fisher-Yates shuffle with this generator.
    template <typename V>
    void shuffle(V& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform() * static_cast<double>(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Derive a child seed for a named sub-stream. Consumers seeded from named
    /// sub-streams stay independent: adding a new consumer does not shift the
    /// draws of existing ones.
    static std::uint64_t derive(std::uint64_t seed, std::string_view name,
                                std::uint64_t a = 0, std::uint64_t b = 0) {
        std::uint64_t h = 0xcbf29ce484222325ull; // FNV-1a
        for (const char c : name) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
            h *= 0x100000001b3ull;
        }
        std::uint64_t x = seed ^ h;
        x = splitmix64(x) ^ (a * 0x9e3779b97f4a7c15ull);
        x = splitmix64(x) ^ (b * 0xbf58476d1ce4e5b9ull);
        return splitmix64(x);
    }

    static Rng substream(std::uint64_t seed, std::string_view name,
                         std::uint64_t a = 0, std::uint64_t b = 0) {
        return Rng(derive(seed, name, a, b));
    }

private:
    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
};

} // namespace satnet
