#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "mixforge/tensor.hpp"

namespace mixforge {

/// One independently seeded random stream. Every stochastic component of a
/// run (pairing, coefficients, noise, weight init, shuffling, ...) owns its
/// own stream derived from the run seed and a stream name, so changing how
/// often one component draws never perturbs the others.
///
/// Determinism contract: byte-identical sequences for the same seed on the
/// same platform (standard-library distributions are implementation-defined
/// across toolchains).
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    std::mt19937_64& engine() noexcept { return engine_; }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    double gamma(double shape, double scale = 1.0) {
        return std::gamma_distribution<double>(shape, scale)(engine_);
    }
    /// Uniform integer in [0, n).
    std::int64_t index(std::int64_t n) {
        return std::uniform_int_distribution<std::int64_t>(0, n - 1)(engine_);
    }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<int> permutation(int n);

    void fill_normal(Tensor& t, double mean = 0.0, double stddev = 1.0);
    void fill_uniform(Tensor& t, double lo, double hi);

private:
    std::mt19937_64 engine_;
};

/// Derives the seed for a named sub-stream from a run seed (FNV-1a over the
/// name, mixed with the seed).
std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view stream_name);

inline RngStream derive_stream(std::uint64_t run_seed, std::string_view stream_name) {
    return RngStream(derive_seed(run_seed, stream_name));
}

}  // namespace mixforge
