#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "align_lab/linalg.hpp"

namespace align_lab {

/// SplitMix64, used only to expand a 64-bit seed into xoshiro state.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

/// xoshiro256** seeded through SplitMix64.
///
/// Draw order is part of the reproducibility contract: normal() consumes two
/// uniforms per Box–Muller pair and returns the cosine branch first, then the
/// cached sine branch on the following call. Matrices are filled column-major.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& w : s_) w = sm.next();
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    result_type operator()() { return next(); }

    result_type next() {
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

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // reject the top partial block so the modulo is unbiased
        const std::uint64_t limit = max() - (max() % n);
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
        Matrix m(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = stddev * normal();
        return m;
    }

    Vector normal_vector(Eigen::Index n) {
        Vector v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
        return v;
    }

    Vector unit_vector(Eigen::Index n) {
        Vector v;
        do {
            v = normal_vector(n);
        } while (!(v.norm() > 0.0));
        return v / v.norm();
    }

    /// Haar-ish random orthonormal matrix: QR of a Gaussian matrix with R's
    /// diagonal signs folded into Q.
    Matrix orthonormal(Eigen::Index n) {
        const Matrix g = normal_matrix(n, n);
        Eigen::HouseholderQR<Matrix> qr(g);
        Matrix q = qr.householderQ() * Matrix::Identity(n, n);
        const Matrix r = qr.matrixQR();
        for (Eigen::Index j = 0; j < n; ++j)
            if (r(j, j) < 0.0) q.col(j) *= -1.0;
        return q;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4]{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace align_lab
