#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "align_lab/rng.hpp"

using align_lab::Rng;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Asymptotic Kolmogorov distribution tail, P(K > t).
double kolmogorov_tail(double t) {
    double s = 0.0;
    for (int k = 1; k <= 100; ++k) s += (k % 2 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * t * t);
    return std::clamp(s, 0.0, 1.0);
}

} // namespace

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.normal(), b.normal());
}

TEST(Rng, SeedZeroIsUsable) {
    Rng r(0);
    std::uint64_t acc = 0;
    for (int i = 0; i < 16; ++i) acc |= r.next();
    EXPECT_NE(acc, 0u);
}

TEST(Rng, DifferentSeedsDiffer) {
    Rng a(1), b(2);
    EXPECT_NE(a.next(), b.next());
}

TEST(Rng, NormalPassesKolmogorovSmirnov) {
    for (std::uint64_t seed : {0ull, 1ull, 1234567ull}) {
        Rng r(seed);
        const int n = 100000;
        std::vector<double> xs(n);
        for (auto& x : xs) x = r.normal();
        std::sort(xs.begin(), xs.end());
        double d = 0.0;
        for (int i = 0; i < n; ++i) {
            const double f = normal_cdf(xs[i]);
            d = std::max({d, (i + 1.0) / n - f, f - static_cast<double>(i) / n});
        }
        const double p = kolmogorov_tail(std::sqrt(static_cast<double>(n)) * d);
        EXPECT_GT(p, 0.01) << "seed " << seed << " D=" << d;
    }
}

TEST(Rng, UniformInUnitInterval) {
    Rng r(5);
    double lo = 1.0, hi = 0.0, sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform();
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    EXPECT_GE(lo, 0.0);
    EXPECT_LT(hi, 1.0);
    EXPECT_NEAR(sum / 100000.0, 0.5, 0.01);
}

TEST(Rng, BelowStaysInRange) {
    Rng r(6);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) ++counts[r.below(7)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Rng, MatricesFillColumnMajor) {
    Rng a(9), b(9);
    const auto m = a.normal_matrix(3, 2);
    for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 3; ++i) EXPECT_EQ(m(i, j), b.normal());
}

TEST(Rng, OrthonormalIsOrthonormal) {
    Rng r(10);
    const auto q = r.orthonormal(8);
    EXPECT_LE(align_lab::orthonormality_defect(q), 1e-12);
}
