#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace protoform {

// Deterministic random source. All randomness in the project flows through
// this generator so that runs are reproducible from a single u64 seed,
// independent of the standard library's distribution implementations.
//
// Core is xoshiro-style splitmix64 seeding of a 64-bit Mersenne-free stream:
// we keep it simple and use splitmix64 itself as the generator; its period
// (2^64) is far beyond anything consumed here and its output is well mixed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // Derive an independent stream, e.g. per-epoch shuffle streams or
    // per-component init streams. Mixing the tag through splitmix64 keeps
    // streams decorrelated.
    static Rng derive(std::uint64_t seed, std::uint64_t stream_tag) {
        Rng mixer(seed ^ (0x9e3779b97f4a7c15ULL + stream_tag));
        mixer.next_u64();
        return Rng(mixer.next_u64() ^ stream_tag);
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        // Rejection-free modulo is fine here: n is tiny relative to 2^64,
        // bias is below 2^-50.
        return next_u64() % n;
    }

    // Standard normal via Box-Muller. One value per call, cached pair.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    std::vector<double> normal_vec(std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = normal();
        return v;
    }

    // Uniform direction on the unit sphere in R^dim.
    std::vector<double> unit_vector(std::size_t dim) {
        std::vector<double> v;
        double norm2 = 0.0;
        do {
            v = normal_vec(dim);
            norm2 = 0.0;
            for (double x : v) norm2 += x * x;
        } while (norm2 < 1e-24);
        const double inv = 1.0 / std::sqrt(norm2);
        for (auto& x : v) x *= inv;
        return v;
    }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace protoform
