// Statistical helpers for distributional tests: a two-sample
// Kolmogorov-Smirnov test with the asymptotic p-value and an independent
// Beta sampler built on the textbook gamma-ratio construction.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mixforge/rng.hpp"

namespace stats {

// Two-sample KS statistic: sup_x |F_a(x) - F_b(x)| over the pooled sample.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::size_t na = a.size(), nb = b.size();
    std::size_t ia = 0, ib = 0;
    double d = 0;
    while (ia < na && ib < nb) {
        const double x = std::min(a[ia], b[ib]);
        while (ia < na && a[ia] <= x) ++ia;
        while (ib < nb && b[ib] <= x) ++ib;
        d = std::max(d, std::abs(double(ia) / na - double(ib) / nb));
    }
    return d;
}

// Asymptotic Kolmogorov survival function Q(lambda) = 2 sum_{j>=1}
// (-1)^{j-1} exp(-2 j^2 lambda^2).
inline double kolmogorov_q(double lam) {
    if (lam < 1e-8) return 1.0;
    double sum = 0;
    double sign = 1;
    for (int j = 1; j <= 100; ++j) {
        const double term = std::exp(-2.0 * j * j * lam * lam);
        sum += sign * term;
        sign = -sign;
        if (term < 1e-12) break;
    }
    return std::clamp(2 * sum, 0.0, 1.0);
}

// Approximate p-value of the two-sample test (Stephens' small-sample
// correction on the asymptotic distribution).
inline double ks_p_value(const std::vector<double>& a, const std::vector<double>& b) {
    const double d = ks_statistic(a, b);
    const double ne = double(a.size()) * b.size() / (a.size() + b.size());
    const double rne = std::sqrt(ne);
    return kolmogorov_q((rne + 0.12 + 0.11 / rne) * d);
}

// Beta(alpha, beta) via the gamma-ratio identity X/(X+Y),
// X ~ Gamma(alpha), Y ~ Gamma(beta).
inline double sample_beta(double alpha, double beta, mixforge::RngStream& rng) {
    const double x = rng.gamma(alpha, 1.0);
    const double y = rng.gamma(beta, 1.0);
    const double s = x + y;
    return s > 0 ? x / s : 0.5;
}

inline double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / double(v.size());
}

inline double stddev(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size() - 1));
}

}  // namespace stats
