#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "align_lab/errors.hpp"

namespace align_lab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Default relative cutoff separating genuine singular directions from numerical zero.
inline constexpr double kDefaultRankTol = 1e-10;
/// Relative tolerance under which consecutive singular values count as one degenerate group.
inline constexpr double kDegeneracyTol = 1e-8;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) {
        throw NonFiniteError(std::string(what) + ": matrix has non-finite entries");
    }
}

inline void require_shape(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// Frobenius inner product Tr(AᵀB).
inline double frobenius_inner(const Matrix& a, const Matrix& b) {
    require_shape(a.rows() == b.rows() && a.cols() == b.cols(),
                  "frobenius_inner: " + shape_str(a) + " vs " + shape_str(b));
    return (a.array() * b.array()).sum();
}

/// rows×cols matrix with `diag` on the leading diagonal (truncated or zero padded).
inline Matrix diag_embed(const Vector& diag, Eigen::Index rows, Eigen::Index cols) {
    Matrix out = Matrix::Zero(rows, cols);
    const Eigen::Index n = std::min({rows, cols, diag.size()});
    for (Eigen::Index i = 0; i < n; ++i) out(i, i) = diag(i);
    return out;
}

/// max |QᵀQ − I| over all entries.
inline double orthonormality_defect(const Matrix& q) {
    const Matrix g = q.transpose() * q;
    return (g - Matrix::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
}

inline bool is_orthonormal(const Matrix& q, double tol = 1e-10) {
    return q.rows() >= q.cols() && orthonormality_defect(q) <= tol;
}

/// A usSVD: A = U·diag(sigma)·Vᵀ with square orthonormal U (m×m) and V (n×n).
/// The sigma entries may be in any order and of any sign; `svd` returns the
/// canonical member of the family (sorted descending, nonnegative).
struct UsSvd {
    Matrix u;
    Vector sigma;
    Matrix v;

    Matrix reconstruct() const {
        return u * diag_embed(sigma, u.rows(), v.rows()) * v.transpose();
    }
};

namespace detail {

/// Index of the largest-magnitude entry of a column; ties go to the lowest row.
inline Eigen::Index dominant_row(const Eigen::Ref<const Vector>& col) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index i = 0; i < col.size(); ++i) {
        const double a = std::abs(col(i));
        if (a > best_abs) {
            best_abs = a;
            best = i;
        }
    }
    return best;
}

} // namespace detail

/// Canonical SVD: sigma nonnegative and descending; every column of U has its
/// largest-magnitude entry positive, with V's matching column flipped alongside.
/// Columns of V past min(m, n) get the same sign rule on their own.
inline UsSvd svd(const Matrix& a) {
    require_finite(a, "svd");
    const Eigen::Index m = a.rows();
    const Eigen::Index n = a.cols();
    if (m == 0 || n == 0) throw ShapeError("svd: empty matrix");

    Eigen::BDCSVD<Matrix> dec(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (dec.info() != Eigen::Success) {
        throw DecompositionError("svd: decomposition failed for " + shape_str(a));
    }
    UsSvd out{dec.matrixU(), dec.singularValues(), dec.matrixV()};
    if (!out.u.allFinite() || !out.v.allFinite() || !out.sigma.allFinite()) {
        throw DecompositionError("svd: non-finite factors for " + shape_str(a));
    }
    const Eigen::Index k = std::min(m, n);
    for (Eigen::Index j = 0; j < m; ++j) {
        const Eigen::Index i = detail::dominant_row(out.u.col(j));
        if (out.u(i, j) < 0.0) {
            out.u.col(j) *= -1.0;
            if (j < k) out.v.col(j) *= -1.0;
        }
    }
    for (Eigen::Index j = k; j < n; ++j) {
        const Eigen::Index i = detail::dominant_row(out.v.col(j));
        if (out.v(i, j) < 0.0) out.v.col(j) *= -1.0;
    }
    return out;
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
struct SymEigen {
    Vector values;
    Matrix vectors;
};

inline SymEigen sym_eigen_desc(const Matrix& s) {
    require_shape(s.rows() == s.cols(), "sym_eigen_desc: matrix must be square, got " + shape_str(s));
    require_finite(s, "sym_eigen_desc");
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    if (es.info() != Eigen::Success) throw DecompositionError("sym_eigen_desc: solver failed");
    const Eigen::Index n = s.rows();
    SymEigen out{Vector(n), Matrix(n, n)};
    for (Eigen::Index j = 0; j < n; ++j) {
        out.values(j) = es.eigenvalues()(n - 1 - j);
        out.vectors.col(j) = es.eigenvectors().col(n - 1 - j);
    }
    return out;
}

struct AlignmentScore {
    double value = 0.0;
    std::size_t matched_rank = 0;
};

struct ScoreOptions {
    double rank_tol = kDefaultRankTol;
    /// Compare at most this many leading directions (unbounded when empty).
    std::optional<std::size_t> max_directions;
};

namespace detail {

inline Eigen::Index count_above(const Vector& sigma, double rank_tol) {
    if (sigma.size() == 0) return 0;
    const double top = sigma.cwiseAbs().maxCoeff();
    if (!(top > 0.0)) return 0;
    Eigen::Index c = 0;
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
        if (std::abs(sigma(i)) > rank_tol * top) ++c;
    }
    return c;
}

inline bool near_equal(double a, double b, double scale) {
    return std::abs(a - b) <= kDegeneracyTol * scale;
}

} // namespace detail

/// Mean cosine of principal angles between corresponding singular directions.
///
/// Columns are compared in the given (descending) order. Consecutive indices
/// fall into one group whenever either side has near-equal singular values
/// there, and each group is scored as a subspace, so rotations inside a
/// degenerate group and per-column sign flips do not register.
inline AlignmentScore alignment_score(const Matrix& left, const Matrix& right, const Vector& sigma_left,
                                      const Vector& sigma_right, const ScoreOptions& opts = {}) {
    require_shape(left.rows() == right.rows(),
                  "alignment_score: ambient dimensions differ (" + shape_str(left) + " vs " + shape_str(right) + ")");
    require_shape(sigma_left.size() <= left.cols() && sigma_right.size() <= right.cols(),
                  "alignment_score: more singular values than columns");
    Eigen::Index m = std::min(detail::count_above(sigma_left, opts.rank_tol),
                              detail::count_above(sigma_right, opts.rank_tol));
    if (opts.max_directions) m = std::min<Eigen::Index>(m, static_cast<Eigen::Index>(*opts.max_directions));
    if (m == 0) throw EmptyRankError("alignment_score: no singular value above the rank cutoff");

    const double scale_l = sigma_left.cwiseAbs().maxCoeff();
    const double scale_r = sigma_right.cwiseAbs().maxCoeff();
    double total = 0.0;
    Eigen::Index start = 0;
    while (start < m) {
        Eigen::Index end = start + 1;
        while (end < m && (detail::near_equal(sigma_left(end - 1), sigma_left(end), scale_l) ||
                           detail::near_equal(sigma_right(end - 1), sigma_right(end), scale_r))) {
            ++end;
        }
        const Eigen::Index g = end - start;
        if (g == 1) {
            total += std::abs(left.col(start).dot(right.col(start)));
        } else {
            const Matrix overlap = left.middleCols(start, g).transpose() * right.middleCols(start, g);
            Eigen::JacobiSVD<Matrix> dec(overlap);
            total += dec.singularValues().sum();
        }
        start = end;
    }
    return {std::clamp(total / static_cast<double>(m), 0.0, 1.0), static_cast<std::size_t>(m)};
}

/// Scores U_i against V_{i+1} for each adjacent pair of precomputed layer
/// decompositions. A pair in which one layer is exactly zero is vacuously
/// aligned (any basis is a valid usSVD of 0) and reports value 1 with
/// matched_rank 0.
inline std::vector<AlignmentScore> adjacent_scores_from(std::span<const UsSvd> dec, const ScoreOptions& opts = {}) {
    if (dec.size() < 2) throw ShapeError("layer_adjacent_scores: need at least two layers");
    std::vector<AlignmentScore> out;
    out.reserve(dec.size() - 1);
    for (std::size_t i = 0; i + 1 < dec.size(); ++i) {
        require_shape(dec[i].u.rows() == dec[i + 1].v.rows(),
                      "layer_adjacent_scores: layer " + std::to_string(i + 1) + " output does not feed layer " +
                          std::to_string(i + 2));
        const bool zero_pair = !(dec[i].sigma.size() > 0 && dec[i].sigma(0) > 0.0) ||
                               !(dec[i + 1].sigma.size() > 0 && dec[i + 1].sigma(0) > 0.0);
        if (zero_pair) {
            out.push_back({1.0, 0});
            continue;
        }
        out.push_back(alignment_score(dec[i].u, dec[i + 1].v, dec[i].sigma, dec[i + 1].sigma, opts));
    }
    return out;
}

inline std::vector<UsSvd> svd_all(std::span<const Matrix> layers) {
    std::vector<UsSvd> dec;
    dec.reserve(layers.size());
    for (const auto& w : layers) dec.push_back(svd(w));
    return dec;
}

inline std::vector<AlignmentScore> layer_adjacent_scores(std::span<const Matrix> layers,
                                                         const ScoreOptions& opts = {}) {
    if (layers.size() < 2) throw ShapeError("layer_adjacent_scores: need at least two layers");
    return adjacent_scores_from(svd_all(layers), opts);
}

struct InvarianceScore {
    AlignmentScore u;
    AlignmentScore v;
};

/// Per layer: left singular bases at t vs 0, and right singular bases at t vs 0.
inline std::vector<InvarianceScore> invariance_from(std::span<const UsSvd> dec_t, std::span<const UsSvd> dec_0,
                                                    const ScoreOptions& opts = {}) {
    require_shape(dec_t.size() == dec_0.size(), "invariance_scores: depth mismatch");
    std::vector<InvarianceScore> out;
    out.reserve(dec_t.size());
    for (std::size_t i = 0; i < dec_t.size(); ++i) {
        const UsSvd& a = dec_t[i];
        const UsSvd& b = dec_0[i];
        require_shape(a.u.rows() == b.u.rows() && a.v.rows() == b.v.rows(),
                      "invariance_scores: layer " + std::to_string(i + 1) + " changed shape");
        const bool zero = !(a.sigma(0) > 0.0) || !(b.sigma(0) > 0.0);
        if (zero) {
            out.push_back({{1.0, 0}, {1.0, 0}});
            continue;
        }
        out.push_back({alignment_score(a.u, b.u, a.sigma, b.sigma, opts),
                       alignment_score(a.v, b.v, a.sigma, b.sigma, opts)});
    }
    return out;
}

inline std::vector<InvarianceScore> invariance_scores(std::span<const Matrix> layers_t,
                                                      std::span<const Matrix> layers_0,
                                                      const ScoreOptions& opts = {}) {
    require_shape(layers_t.size() == layers_0.size(), "invariance_scores: depth mismatch");
    return invariance_from(svd_all(layers_t), svd_all(layers_0), opts);
}

/// True iff every off-diagonal entry is within tol·max(1, max|m|).
inline bool is_diagonal(const Matrix& m, double tol) {
    if (m.size() == 0) return true;
    const double bound = tol * std::max(1.0, m.cwiseAbs().maxCoeff());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            if (i != j && std::abs(m(i, j)) > bound) return false;
        }
    }
    return true;
}

/// Moore–Penrose pseudoinverse of a symmetric PSD matrix through its
/// eigendecomposition. Eigenvalues at or below rel_cutoff·λ_max are dropped.
inline Matrix psd_pinv(const Matrix& s, double rel_cutoff, Eigen::Index* rank = nullptr) {
    const SymEigen e = sym_eigen_desc(s);
    const double top = e.values.size() ? std::max(e.values(0), 0.0) : 0.0;
    Vector inv = Vector::Zero(e.values.size());
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < e.values.size(); ++i) {
        if (e.values(i) > rel_cutoff * top && e.values(i) > 0.0) {
            inv(i) = 1.0 / e.values(i);
            ++r;
        }
    }
    if (rank) *rank = r;
    return e.vectors * inv.asDiagonal() * e.vectors.transpose();
}

/// Extends the given orthonormal columns to a full orthonormal basis of
/// ℝ^dim by Gram–Schmidt against e_0, e_1, … (smallest index first).
inline Matrix complete_orthonormal(const Matrix& cols, Eigen::Index dim) {
    Matrix out(dim, dim);
    Eigen::Index filled = 0;
    for (Eigen::Index j = 0; j < cols.cols() && filled < dim; ++j) out.col(filled++) = cols.col(j);
    for (Eigen::Index e = 0; e < dim && filled < dim; ++e) {
        Vector cand = Vector::Unit(dim, e);
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index j = 0; j < filled; ++j) cand -= out.col(j).dot(cand) * out.col(j);
        }
        const double nrm = cand.norm();
        if (nrm > 1e-8) out.col(filled++) = cand / nrm;
    }
    if (filled != dim) throw DecompositionError("complete_orthonormal: could not complete basis");
    return out;
}

} // namespace align_lab
