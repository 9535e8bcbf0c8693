#pragma once

#include <cstdint>
#include <limits>
#include <optional>

#include "align_lab/linalg.hpp"
#include "align_lab/rng.hpp"

namespace align_lab {

struct Factorization {
    Matrix w1;
    Matrix w2;
    double norm_sum = 0.0;  // ‖w1‖² + ‖w2‖²
};

/// Two-layer factorization P = W₂W₁ with the least summed squared Frobenius
/// norm. With P = UΣVᵀ (thin, inner size q = min(m, n)) and any orthonormal
/// q×q w_mid = W: W₁ = WΣ^{1/2}Vᵀ, W₂ = UΣ^{1/2}Wᵀ.
inline Factorization min_norm_factorization(const Matrix& p, const std::optional<Matrix>& w_mid = std::nullopt) {
    require_finite(p, "min_norm_factorization: P");
    if (p.size() == 0) throw ShapeError("min_norm_factorization: empty target");
    const Eigen::Index q = std::min(p.rows(), p.cols());
    Matrix w = Matrix::Identity(q, q);
    if (w_mid) {
        require_shape(w_mid->rows() == q && w_mid->cols() == q,
                      "min_norm_factorization: w_mid is " + shape_str(*w_mid) + ", expected " + std::to_string(q) +
                          "x" + std::to_string(q));
        if (!is_orthonormal(*w_mid, 1e-10)) throw PreconditionError("min_norm_factorization: w_mid is not orthonormal");
        w = *w_mid;
    }
    const UsSvd s = svd(p);
    const Vector root = s.sigma.cwiseSqrt();
    Factorization f;
    f.w1 = w * root.asDiagonal() * s.v.leftCols(q).transpose();
    f.w2 = s.u.leftCols(q) * root.asDiagonal() * w.transpose();
    f.norm_sum = f.w1.squaredNorm() + f.w2.squaredNorm();
    return f;
}

struct NormBoundReport {
    std::size_t trials = 0;
    std::size_t violations = 0;
    double bound = 0.0;                                          // 2·Tr(Σ)
    double optimum = 0.0;                                        // norm_sum of min_norm_factorization
    double min_sampled = std::numeric_limits<double>::infinity();
    double worst_undercut = -std::numeric_limits<double>::infinity();  // max(bound − sampled)
};

inline constexpr double kNormBoundSlack = 1e-8;

/// Samples reparameterizations (W₂G, G⁻¹W₁) of the optimum with random
/// invertible G and counts those whose norm sum falls below 2·Tr(Σ) − 1e−8.
inline NormBoundReport norm_lower_bound_check(const Matrix& p, std::size_t trials, std::uint64_t seed) {
    if (trials < 1) throw PreconditionError("norm_lower_bound_check: trials must be at least 1");
    const Factorization opt = min_norm_factorization(p);
    NormBoundReport rep;
    rep.trials = trials;
    rep.bound = 2.0 * svd(p).sigma.sum();
    rep.optimum = opt.norm_sum;
    const Eigen::Index q = opt.w1.rows();
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        Matrix g;
        Eigen::PartialPivLU<Matrix> lu;
        do {
            g = rng.normal_matrix(q, q);
            lu.compute(g);
        } while (!(std::abs(lu.determinant()) > 1e-6));
        const Matrix w1 = lu.solve(opt.w1);
        const Matrix w2 = opt.w2 * g;
        const double ns = w1.squaredNorm() + w2.squaredNorm();
        rep.min_sampled = std::min(rep.min_sampled, ns);
        rep.worst_undercut = std::max(rep.worst_undercut, rep.bound - ns);
        if (ns < rep.bound - kNormBoundSlack) ++rep.violations;
    }
    return rep;
}

} // namespace align_lab
