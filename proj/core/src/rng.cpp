#include "mixforge/rng.hpp"

#include <numeric>

namespace mixforge {

std::vector<int> RngStream::permutation(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        const auto j = static_cast<int>(index(i + 1));
        std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    }
    return p;
}

void RngStream::fill_normal(Tensor& t, double mean, double stddev) {
    std::normal_distribution<double> dist(mean, stddev);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(engine_);
}

void RngStream::fill_uniform(Tensor& t, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(engine_);
}

std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view stream_name) {
    // FNV-1a over the stream name, folded together with the run seed.
    std::uint64_t h = 14695981039346656037ULL;
    constexpr std::uint64_t kPrime = 1099511628211ULL;
    for (unsigned char c : stream_name) {
        h ^= c;
        h *= kPrime;
    }
    for (int i = 0; i < 8; ++i) {
        h ^= (run_seed >> (8 * i)) & 0xffULL;
        h *= kPrime;
    }
    return h;
}

}  // namespace mixforge
