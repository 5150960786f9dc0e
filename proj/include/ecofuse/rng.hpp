#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ecofuse::rng {

// All randomness in the library flows from one root seed. Sub-seeds are
// derived per purpose with derive_seed(root, label) so that adding or
// reordering consumers never perturbs the streams of the others.
//
// The generator is std::mt19937_64 (its output sequence is pinned by the
// standard), and every reduction below is hand-rolled, so draws are
// reproducible across standard libraries and platforms.

constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
    std::uint64_t s = root ^ fnv1a64(label);
    splitmix64(s);
    return splitmix64(s);
}

// Uniform in [0,1) with 53 random bits.
inline double uniform01(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * uniform01(g);
}

// Uniform integer in [0, n). Modulo bias is ~n/2^64, irrelevant at our sizes.
inline std::uint64_t bounded(std::mt19937_64& g, std::uint64_t n) {
    return n == 0 ? 0 : g() % n;
}

template <class T>
void shuffle(std::vector<T>& v, std::mt19937_64& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(bounded(g, i));
        std::swap(v[i - 1], v[j]);
    }
}

// Uniform point on the probability simplex (normalized unit exponentials).
inline std::vector<double> simplex_point(std::mt19937_64& g, std::size_t k) {
    std::vector<double> w(k);
    double sum = 0.0;
    for (auto& x : w) {
        double u = uniform01(g);
        if (u <= 0.0) u = 0x1.0p-53;
        x = -std::log(u);
        sum += x;
    }
    for (auto& x : w) x /= sum;
    return w;
}

}  // namespace ecofuse::rng
