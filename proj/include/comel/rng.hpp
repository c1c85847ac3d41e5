#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "comel/matrix.hpp"

namespace comel {

// splitmix64 step; used to mix seeds so sub-streams are decorrelated.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic sub-seed from a base seed, a stream tag, and indices.
// Every randomized stage of the pipeline draws from its own derived
// stream, so resuming mid-sequence replays bit-identical randomness.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
    std::uint64_t h = mix64(base);
    for (char ch : tag) h = mix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(ch)));
    h = mix64(h ^ a);
    h = mix64(h ^ b);
    return h;
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    double gaussian(double mean = 0.0, double std = 1.0) {
        return std::normal_distribution<double>(mean, std)(engine_);
    }
    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    Matrix gaussian_matrix(int rows, int cols, double std) {
        Matrix m(rows, cols);
        for (double& v : m.data) v = gaussian(0.0, std);
        return m;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), engine_);
    }

    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
};

}  // namespace comel
