#pragma once

#include <cstdint>
#include <random>

#include "ddvi/tensor.hpp"

namespace ddvi {

// Deterministic random source. mt19937_64 output is fully specified by the
// standard and the uniform/normal transforms below avoid the
// implementation-defined std::*_distribution algorithms, so streams are
// bit-identical across platforms for a fixed seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 1) : seed_(seed), gen_(mix(seed)) {}

    std::uint64_t raw() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    void fill_normal(Tensor& t, double mean = 0.0, double stddev = 1.0) {
        for (double& v : t.data) v = normal(mean, stddev);
    }

    void fill_uniform(Tensor& t, double lo, double hi) {
        for (double& v : t.data) v = uniform(lo, hi);
    }

    Tensor normal_matrix(std::size_t r, std::size_t c) {
        Tensor t({r, c});
        fill_normal(t);
        return t;
    }

    // Independent child stream keyed on (base seed, salt); detached from the
    // parent's draw position so forks are reproducible regardless of call order.
    Rng fork(std::uint64_t salt) const { return Rng(mix(seed_ ^ mix(salt + 0x9e3779b97f4a7c15ull))); }

    // Fisher-Yates with this stream (std::shuffle is implementation-defined).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    std::uint64_t seed() const { return seed_; }

private:
    static std::uint64_t mix(std::uint64_t x) {
        // splitmix64 finalizer
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ddvi
