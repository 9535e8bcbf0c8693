#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "align_lab/linalg.hpp"
#include "align_lab/network.hpp"
#include "align_lab/rng.hpp"

namespace align_lab {

/// Orthonormal frames Q_0 … Q_d; layer i is built as Q_i·Σ_i·Q_{i−1}ᵀ, so the
/// left factor of layer i is the right factor of layer i+1.
class AlignedBasis {
public:
    explicit AlignedBasis(std::vector<Matrix> q) : q_(std::move(q)) {
        if (q_.size() < 2) throw ShapeError("AlignedBasis: need at least Q_0 and Q_1");
        for (std::size_t i = 0; i < q_.size(); ++i) {
            require_shape(q_[i].rows() == q_[i].cols(), "AlignedBasis: Q_" + std::to_string(i) + " is not square");
            if (!is_orthonormal(q_[i], 1e-10)) {
                throw PreconditionError("AlignedBasis: Q_" + std::to_string(i) + " is not orthonormal");
            }
        }
    }

    /// Q_0 = v, Q_d = u, interior frames identity (or the supplied ones).
    static AlignedBasis with_ends(const std::vector<Eigen::Index>& dims, const Matrix& v, const Matrix& u,
                                  std::vector<Matrix> interior = {}) {
        if (dims.size() < 2) throw ShapeError("AlignedBasis::with_ends: need at least two dims");
        const std::size_t d = dims.size() - 1;
        std::vector<Matrix> q;
        q.reserve(d + 1);
        q.push_back(v);
        for (std::size_t i = 1; i < d; ++i) {
            q.push_back(i - 1 < interior.size() ? interior[i - 1] : Matrix::Identity(dims[i], dims[i]));
        }
        q.push_back(u);
        for (std::size_t i = 0; i <= d; ++i) {
            require_shape(q[i].rows() == dims[i], "AlignedBasis::with_ends: Q_" + std::to_string(i) +
                                                      " has size " + std::to_string(q[i].rows()) +
                                                      ", expected " + std::to_string(dims[i]));
        }
        return AlignedBasis(std::move(q));
    }

    std::size_t depth() const { return q_.size() - 1; }
    const Matrix& q(std::size_t i) const { return q_.at(i); }
    const std::vector<Matrix>& frames() const { return q_; }

    std::vector<Eigen::Index> dims() const {
        std::vector<Eigen::Index> d;
        for (const auto& m : q_) d.push_back(m.rows());
        return d;
    }

private:
    std::vector<Matrix> q_;
};

/// W_i = Q_i · diag(sigmas_i) · Q_{i−1}ᵀ for i = 1..d.
inline LinearNetwork aligned_init(const AlignedBasis& basis, const std::vector<Vector>& sigmas) {
    const std::size_t d = basis.depth();
    require_shape(sigmas.size() == d, "aligned_init: expected " + std::to_string(d) + " sigma vectors, got " +
                                          std::to_string(sigmas.size()));
    std::vector<Matrix> layers;
    layers.reserve(d);
    for (std::size_t i = 1; i <= d; ++i) {
        const Matrix& out = basis.q(i);
        const Matrix& in = basis.q(i - 1);
        const Eigen::Index k = std::min(out.rows(), in.rows());
        require_shape(sigmas[i - 1].size() == k, "aligned_init: layer " + std::to_string(i) + " needs " +
                                                     std::to_string(k) + " singular values, got " +
                                                     std::to_string(sigmas[i - 1].size()));
        layers.push_back(out * diag_embed(sigmas[i - 1], out.rows(), in.rows()) * in.transpose());
    }
    return LinearNetwork(std::move(layers));
}

namespace detail {

/// Off-diagonal entries in the top r rows or top r columns are ≈ 0.
inline bool top_block_diagonal(const Matrix& m, Eigen::Index r, double tol) {
    const double bound = tol * std::max(1.0, m.size() ? m.cwiseAbs().maxCoeff() : 0.0);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            if (i == j) continue;
            if ((i < r || j < r) && std::abs(m(i, j)) > bound) return false;
        }
    }
    return true;
}

} // namespace detail

/// Top r rows and columns of UᵀYXᵀV and of VᵀXXᵀV are diagonal (block form);
/// with r = k_0 = k_d this is plain diagonality of both.
inline bool verify_condition(const Matrix& u, const Matrix& v, const Matrix& x, const Matrix& y, Eigen::Index r,
                             double tol) {
    require_shape(u.rows() == y.rows() && u.cols() == y.rows(), "verify_condition: u must be k_d×k_d");
    require_shape(v.rows() == x.rows() && v.cols() == x.rows(), "verify_condition: v must be k_0×k_0");
    require_shape(x.cols() == y.cols(), "verify_condition: x and y sample counts differ");
    if (r < 1 || r > std::min(u.rows(), v.rows())) throw ShapeError("verify_condition: r out of range");
    const Matrix cross = u.transpose() * y * x.transpose() * v;
    const Matrix gram = v.transpose() * x * x.transpose() * v;
    return detail::top_block_diagonal(cross, r, tol) && detail::top_block_diagonal(gram, r, tol);
}

/// Orthonormal (U, V) witnessing the data condition, with the diagonals of the
/// top r×r blocks of UᵀYXᵀV (lambda_prime) and VᵀXXᵀV (lambda).
struct DataCondition {
    Matrix u;
    Matrix v;
    Vector lambda_prime;
    Vector lambda;
    Eigen::Index r = 0;
};

inline constexpr double kConditionTol = 1e-9;

/// Constructs (U, V) satisfying the data condition when one exists.
///
/// V diagonalizes XXᵀ, rotated inside each (near-)degenerate eigenspace so the
/// corresponding columns of YXᵀV are orthogonal. U takes the normalized
/// nonzero columns of YXᵀV and is completed by Gram–Schmidt. Directions are
/// permuted so nonzero λ′ come first, then λ = λ′ = 0, then λ > 0 with λ′ = 0.
/// Returns nullopt when the result fails verify_condition; in degenerate
/// eigenspaces this search is sound but not complete.
inline std::optional<DataCondition> find_condition(const Matrix& x, const Matrix& y, Eigen::Index r,
                                                   double tol = kConditionTol) {
    require_shape(x.cols() == y.cols(), "find_condition: x and y sample counts differ");
    require_finite(x, "find_condition x");
    require_finite(y, "find_condition y");
    const Eigen::Index k0 = x.rows();
    const Eigen::Index kd = y.rows();
    if (r < 1 || r > std::min(k0, kd)) throw ShapeError("find_condition: r must lie in [1, min(k_0, k_d)]");

    const Matrix gram = x * x.transpose();
    const Matrix cross = y * x.transpose();
    const SymEigen eig = sym_eigen_desc(gram);
    Matrix v = eig.vectors;
    const double lam_scale = std::max(eig.values(0), 0.0);

    for (Eigen::Index start = 0; start < k0;) {
        Eigen::Index end = start + 1;
        while (end < k0 && std::abs(eig.values(end) - eig.values(end - 1)) <= kDegeneracyTol * lam_scale) ++end;
        if (end - start > 1) {
            const Matrix block = cross * v.middleCols(start, end - start);
            const UsSvd s = svd(block);
            v.middleCols(start, end - start) = v.middleCols(start, end - start) * s.v;
        }
        start = end;
    }

    const Matrix g = cross * v;
    Vector lam(k0), gnorm(k0);
    for (Eigen::Index j = 0; j < k0; ++j) {
        lam(j) = v.col(j).dot(gram * v.col(j));
        gnorm(j) = g.col(j).norm();
    }
    const double g_scale = gnorm.size() ? gnorm.maxCoeff() : 0.0;
    auto g_nonzero = [&](Eigen::Index j) { return gnorm(j) > 1e-10 * g_scale && gnorm(j) > 0.0; };
    auto lam_zero = [&](Eigen::Index j) { return lam(j) <= 1e-10 * lam_scale; };
    auto rank_class = [&](Eigen::Index j) { return g_nonzero(j) ? 0 : (lam_zero(j) ? 1 : 2); };

    std::vector<Eigen::Index> order(static_cast<std::size_t>(k0));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        const int ca = rank_class(a), cb = rank_class(b);
        if (ca != cb) return ca < cb;
        if (ca == 0 && gnorm(a) != gnorm(b)) return gnorm(a) > gnorm(b);
        return lam(a) > lam(b);
    });

    Matrix v_sorted(k0, k0);
    for (Eigen::Index j = 0; j < k0; ++j) v_sorted.col(j) = v.col(order[static_cast<std::size_t>(j)]);

    // Gram–Schmidt in priority order: top-block image directions, the rest of
    // the image, then standard basis vectors for everything left.
    std::vector<Vector> basis;
    auto try_add = [&](Vector c) -> bool {
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis) c -= b.dot(c) * b;
        const double nrm = c.norm();
        if (nrm <= 1e-8) return false;
        basis.push_back(c / nrm);
        return true;
    };
    std::vector<std::optional<Vector>> top_slots(static_cast<std::size_t>(r));
    for (Eigen::Index j = 0; j < r; ++j) {
        const Eigen::Index src = order[static_cast<std::size_t>(j)];
        if (g_nonzero(src) && try_add(g.col(src) / gnorm(src))) top_slots[static_cast<std::size_t>(j)] = basis.back();
    }
    std::vector<Vector> rest;
    for (Eigen::Index j = r; j < k0; ++j) {
        const Eigen::Index src = order[static_cast<std::size_t>(j)];
        if (g_nonzero(src) && try_add(g.col(src) / gnorm(src))) rest.push_back(basis.back());
    }
    std::vector<Vector> fill;
    for (Eigen::Index e = 0; e < kd && static_cast<Eigen::Index>(basis.size()) < kd; ++e) {
        if (try_add(Vector::Unit(kd, e))) fill.push_back(basis.back());
    }
    if (static_cast<Eigen::Index>(basis.size()) != kd) return std::nullopt;

    Matrix u(kd, kd);
    std::size_t next_fill = 0;
    Eigen::Index col = 0;
    for (auto& slot : top_slots) {
        if (!slot) {
            if (next_fill >= fill.size()) return std::nullopt;
            slot = fill[next_fill++];
        }
        u.col(col++) = *slot;
    }
    for (const auto& c : rest) u.col(col++) = c;
    while (next_fill < fill.size()) u.col(col++) = fill[next_fill++];

    if (!verify_condition(u, v_sorted, x, y, r, tol)) return std::nullopt;

    DataCondition out;
    out.u = std::move(u);
    out.v = std::move(v_sorted);
    out.r = r;
    const Matrix c = out.u.transpose() * cross * out.v;
    const Matrix gv = out.v.transpose() * gram * out.v;
    out.lambda_prime = c.diagonal().head(r);
    out.lambda = gv.diagonal().head(r).cwiseMax(0.0);
    return out;
}

struct SensingBasis {
    Matrix u;
    Matrix v;
};

/// Candidate (U, V) from the first sensor with all-distinct singular values;
/// accepted iff UᵀM_iV is diagonal within tol for every sensor.
inline std::optional<SensingBasis> check_sensing_condition(std::span<const Matrix> sensors, double tol = kConditionTol) {
    if (sensors.empty()) throw ShapeError("check_sensing_condition: empty sensor list");
    for (const auto& m : sensors) {
        require_shape(m.rows() == m.cols() && m.rows() == sensors[0].rows(),
                      "check_sensing_condition: sensors must be square and equally sized");
    }
    std::optional<SensingBasis> cand;
    for (const auto& m : sensors) {
        const UsSvd s = svd(m);
        const double top = s.sigma(0);
        bool distinct = top > 0.0;
        for (Eigen::Index i = 1; distinct && i < s.sigma.size(); ++i) {
            distinct = s.sigma(i - 1) - s.sigma(i) > kDegeneracyTol * top;
        }
        if (distinct) {
            cand = SensingBasis{s.u, s.v};
            break;
        }
    }
    if (!cand) return std::nullopt;
    for (const auto& m : sensors) {
        if (!is_diagonal(cand->u.transpose() * m * cand->v, tol)) return std::nullopt;
    }
    return cand;
}

/// Rank-1 aligned initialization for a scalar-output network. Layers 2..d get
/// the common singular value `sigma`; layer 1 starts at zero so its right factor
/// is pulled into the span of the data by the first update.
///
/// Draw order: v_1 (k_0 normals), then u_1 … u_{d−1}.
inline LinearNetwork rank1_aligned_init(const std::vector<Eigen::Index>& dims, std::uint64_t seed, double sigma = 1.0) {
    if (dims.size() < 2) throw ShapeError("rank1_aligned_init: need at least two dims");
    if (dims.back() != 1) throw ShapeError("rank1_aligned_init: output dimension must be 1");
    const std::size_t d = dims.size() - 1;
    Rng rng(seed);
    std::vector<Vector> dirs;  // dirs[i] is the unit vector living in ℝ^{k_i}
    dirs.reserve(d + 1);
    for (std::size_t i = 0; i < d; ++i) dirs.push_back(rng.unit_vector(dims[i]));
    dirs.push_back(Vector::Ones(1));
    std::vector<Matrix> layers;
    layers.reserve(d);
    for (std::size_t i = 1; i <= d; ++i) {
        const double s = (i == 1) ? 0.0 : sigma;
        layers.push_back(s * dirs[i] * dirs[i - 1].transpose());
    }
    return LinearNetwork(std::move(layers));
}

struct MonitorRow {
    std::size_t step = 0;
    std::vector<double> adjacent;
    std::vector<double> left_fixed;   // U_i stays Q_i
    std::vector<double> right_fixed;  // V_i stays Q_{i−1}
    /// max over layers of the off-diagonal mass of Q_iᵀW_iQ_{i−1}, relative to its largest entry
    double off_diagonal = 0.0;
};

struct MonitorReport {
    std::vector<MonitorRow> rows;
    std::optional<std::size_t> first_alignment_violation;
    std::optional<std::size_t> first_strong_violation;
    double worst_alignment = 1.0;
    double worst_strong = 1.0;
};

namespace detail {

/// Scores the canonical singular frames of w against the basis frames, with
/// basis columns reordered by |diag(Q_outᵀ W Q_in)| to match canonical order.
inline std::pair<double, double> frame_fidelity(const Matrix& w, const Matrix& q_out, const Matrix& q_in,
                                                const ScoreOptions& opts, double& off_diag) {
    const Matrix core = q_out.transpose() * w * q_in;
    const Eigen::Index k = std::min(core.rows(), core.cols());
    const double scale = core.cwiseAbs().maxCoeff();
    double off = 0.0;
    for (Eigen::Index j = 0; j < core.cols(); ++j)
        for (Eigen::Index i = 0; i < core.rows(); ++i)
            if (i != j) off = std::max(off, std::abs(core(i, j)));
    off_diag = scale > 0.0 ? off / scale : 0.0;
    if (!(scale > 0.0)) return {1.0, 1.0};

    std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return std::abs(core(a, a)) > std::abs(core(b, b)); });
    Matrix out_perm = q_out, in_perm = q_in;
    Vector ref_sigma(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::Index src = order[static_cast<std::size_t>(j)];
        out_perm.col(j) = q_out.col(src);
        in_perm.col(j) = q_in.col(src);
        ref_sigma(j) = std::abs(core(src, src));
    }
    const UsSvd s = svd(w);
    return {alignment_score(s.u, out_perm, s.sigma, ref_sigma, opts).value,
            alignment_score(s.v, in_perm, s.sigma, ref_sigma, opts).value};
}

} // namespace detail

/// Tracks the invariance conditions step by step: adjacent alignment, fixed
/// interior frames, fixed U_1 and V_d (alignment) and fixed V_1 and U_d
/// (strong alignment), relative to the initialization frames.
inline MonitorReport strong_alignment_monitor(const TrainTrace& trace, const AlignedBasis& basis0, double tol,
                                              const ScoreOptions& opts = {}) {
    MonitorReport rep;
    if (trace.rows.empty()) return rep;
    if (trace.snapshots.size() != trace.rows.size()) {
        throw PreconditionError("strong_alignment_monitor: trace lacks layer snapshots");
    }
    const std::size_t d = basis0.depth();
    for (std::size_t t = 0; t < trace.rows.size(); ++t) {
        const LinearNetwork& net = trace.snapshots[t];
        require_shape(net.depth() == d, "strong_alignment_monitor: snapshot depth differs from basis");
        MonitorRow row;
        row.step = trace.rows[t].step;
        if (d >= 2) {
            for (const auto& s : layer_adjacent_scores(net.layers(), opts)) row.adjacent.push_back(s.value);
        }
        for (std::size_t i = 1; i <= d; ++i) {
            double off = 0.0;
            const auto [lf, rf] = detail::frame_fidelity(net.layer(i - 1), basis0.q(i), basis0.q(i - 1), opts, off);
            row.left_fixed.push_back(lf);
            row.right_fixed.push_back(rf);
            row.off_diagonal = std::max(row.off_diagonal, off);
        }
        double align_min = 1.0;
        for (double a : row.adjacent) align_min = std::min(align_min, a);
        for (std::size_t i = 0; i < d; ++i) {
            if (i > 0) align_min = std::min(align_min, row.right_fixed[i]);      // V_i, i ≥ 2
            if (i + 1 < d) align_min = std::min(align_min, row.left_fixed[i]);   // U_i, i ≤ d−1
        }
        const double strong_min = std::min({align_min, row.right_fixed.front(), row.left_fixed.back()});
        rep.worst_alignment = std::min(rep.worst_alignment, align_min);
        rep.worst_strong = std::min(rep.worst_strong, strong_min);
        if (!rep.first_alignment_violation && align_min < 1.0 - tol) rep.first_alignment_violation = row.step;
        if (!rep.first_strong_violation && strong_min < 1.0 - tol) rep.first_strong_violation = row.step;
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

} // namespace align_lab
