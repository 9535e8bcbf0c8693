#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>

#include "align_lab/linalg.hpp"
#include "align_lab/network.hpp"

namespace align_lab {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct BasisEntry {
    Eigen::Index row;
    Eigen::Index col;
    double value;
};

/// A subspace of m×n matrices given by an orthogonal (not necessarily
/// normalized) basis A_1..A_r. Elements are stored as their nonzero entries.
class LayerStructure {
public:
    using Element = std::vector<BasisEntry>;

    LayerStructure(Eigen::Index rows, Eigen::Index cols, std::vector<Element> elements)
        : rows_(rows), cols_(cols), elements_(std::move(elements)) {
        if (rows_ < 1 || cols_ < 1) throw ShapeError("LayerStructure: empty matrix shape");
        if (elements_.empty()) throw PreconditionError("LayerStructure: basis is empty");
        if (static_cast<Eigen::Index>(elements_.size()) > rows_ * cols_) {
            throw PreconditionError("LayerStructure: more basis elements than matrix entries");
        }
        norms_sq_.resize(static_cast<Eigen::Index>(elements_.size()));
        for (std::size_t j = 0; j < elements_.size(); ++j) {
            double s = 0.0;
            for (const auto& e : elements_[j]) {
                if (e.row < 0 || e.row >= rows_ || e.col < 0 || e.col >= cols_) {
                    throw ShapeError("LayerStructure: basis element " + std::to_string(j) + " has an entry out of range");
                }
                if (!std::isfinite(e.value)) throw NonFiniteError("LayerStructure: non-finite basis entry");
                s += e.value * e.value;
            }
            if (!(s > 0.0)) throw PreconditionError("LayerStructure: basis element " + std::to_string(j) + " is zero");
            norms_sq_(static_cast<Eigen::Index>(j)) = s;
        }
        check_orthogonal();
        build_pattern();
    }

    static LayerStructure from_dense(const std::vector<Matrix>& basis) {
        if (basis.empty()) throw PreconditionError("LayerStructure::from_dense: basis is empty");
        std::vector<Element> elems;
        elems.reserve(basis.size());
        for (const auto& a : basis) {
            require_shape(a.rows() == basis[0].rows() && a.cols() == basis[0].cols(),
                          "LayerStructure::from_dense: basis matrices differ in shape");
            Element el;
            for (Eigen::Index i = 0; i < a.rows(); ++i)
                for (Eigen::Index j = 0; j < a.cols(); ++j)
                    if (a(i, j) != 0.0) el.push_back({i, j, a(i, j)});
            elems.push_back(std::move(el));
        }
        return LayerStructure(basis[0].rows(), basis[0].cols(), std::move(elems));
    }

    Eigen::Index rows() const { return rows_; }
    Eigen::Index cols() const { return cols_; }
    Eigen::Index dim() const { return static_cast<Eigen::Index>(elements_.size()); }
    const Vector& norms_sq() const { return norms_sq_; }
    const std::vector<Element>& elements() const { return elements_; }

    Matrix basis_matrix(Eigen::Index j) const {
        Matrix a = Matrix::Zero(rows_, cols_);
        for (const auto& e : elements_.at(static_cast<std::size_t>(j))) a(e.row, e.col) += e.value;
        return a;
    }

    /// Σ_j c_j A_j
    Matrix materialize(const Vector& coeffs) const {
        check_coeffs(coeffs);
        Matrix w = Matrix::Zero(rows_, cols_);
        for (std::size_t j = 0; j < elements_.size(); ++j) {
            const double c = coeffs(static_cast<Eigen::Index>(j));
            for (const auto& e : elements_[j]) w(e.row, e.col) += c * e.value;
        }
        return w;
    }

    SparseMatrix materialize_sparse(const Vector& coeffs) const {
        check_coeffs(coeffs);
        SparseMatrix w = pattern_;
        double* vals = w.valuePtr();
        std::fill(vals, vals + w.nonZeros(), 0.0);
        for (std::size_t j = 0; j < elements_.size(); ++j) {
            const double c = coeffs(static_cast<Eigen::Index>(j));
            for (std::size_t t = 0; t < elements_[j].size(); ++t) vals[slots_[j][t]] += c * elements_[j][t].value;
        }
        return w;
    }

    /// ⟨m, A_j⟩ for every j.
    Vector inner_products(const Matrix& m) const {
        require_shape(m.rows() == rows_ && m.cols() == cols_,
                      "LayerStructure: matrix is " + shape_str(m) + ", structure is " + std::to_string(rows_) + "x" +
                          std::to_string(cols_));
        Vector out(dim());
        for (std::size_t j = 0; j < elements_.size(); ++j) {
            double s = 0.0;
            for (const auto& e : elements_[j]) s += m(e.row, e.col) * e.value;
            out(static_cast<Eigen::Index>(j)) = s;
        }
        return out;
    }

private:
    void check_coeffs(const Vector& c) const {
        require_shape(c.size() == dim(), "LayerStructure: expected " + std::to_string(dim()) + " coefficients, got " +
                                             std::to_string(c.size()));
    }

    // Sparsity pattern of the union of all elements, plus each entry's slot in
    // its value array, so materialize_sparse only rewrites values.
    void build_pattern() {
        std::vector<Eigen::Triplet<double>> trips;
        for (const auto& el : elements_)
            for (const auto& e : el) trips.emplace_back(e.row, e.col, 1.0);
        pattern_.resize(rows_, cols_);
        pattern_.setFromTriplets(trips.begin(), trips.end());
        pattern_.makeCompressed();
        slots_.resize(elements_.size());
        for (std::size_t j = 0; j < elements_.size(); ++j) {
            for (const auto& e : elements_[j]) {
                const auto* inner = pattern_.innerIndexPtr();
                const auto* b = inner + pattern_.outerIndexPtr()[e.row];
                const auto* en = inner + pattern_.outerIndexPtr()[e.row + 1];
                slots_[j].push_back(static_cast<std::size_t>(std::lower_bound(b, en, e.col) - inner));
            }
        }
    }

    void check_orthogonal() const {
        // Only elements sharing a position can have a nonzero inner product.
        std::map<std::pair<Eigen::Index, Eigen::Index>, std::vector<std::pair<std::size_t, double>>> at;
        for (std::size_t j = 0; j < elements_.size(); ++j)
            for (const auto& e : elements_[j]) at[{e.row, e.col}].emplace_back(j, e.value);
        std::map<std::pair<std::size_t, std::size_t>, double> cross;
        for (const auto& [pos, users] : at) {
            for (std::size_t a = 0; a < users.size(); ++a)
                for (std::size_t b = a + 1; b < users.size(); ++b) {
                    auto key = std::minmax(users[a].first, users[b].first);
                    cross[{key.first, key.second}] += users[a].second * users[b].second;
                }
        }
        for (const auto& [pair, ip] : cross) {
            if (pair.first == pair.second) continue;
            const double bound = 1e-10 * std::sqrt(norms_sq_(static_cast<Eigen::Index>(pair.first)) *
                                                   norms_sq_(static_cast<Eigen::Index>(pair.second)));
            if (std::abs(ip) > bound) {
                throw PreconditionError("LayerStructure: basis elements " + std::to_string(pair.first) + " and " +
                                        std::to_string(pair.second) + " are not orthogonal");
            }
        }
    }

    Eigen::Index rows_;
    Eigen::Index cols_;
    std::vector<Element> elements_;
    Vector norms_sq_;
    SparseMatrix pattern_;
    std::vector<std::vector<std::size_t>> slots_;
};

/// Constant-diagonal indicators of k×k Toeplitz matrices, ordered by diagonal
/// offset 0, +1, −1, +2, −2, … (positive offsets above the main diagonal).
inline LayerStructure toeplitz_basis(Eigen::Index k) {
    if (k < 1) throw PreconditionError("toeplitz_basis: k must be at least 1");
    std::vector<LayerStructure::Element> elems;
    auto diagonal = [&](Eigen::Index offset) {
        LayerStructure::Element el;
        for (Eigen::Index i = 0; i < k; ++i) {
            const Eigen::Index j = i + offset;
            if (j >= 0 && j < k) el.push_back({i, j, 1.0});
        }
        elems.push_back(std::move(el));
    };
    diagonal(0);
    for (Eigen::Index o = 1; o < k; ++o) {
        diagonal(o);
        diagonal(-o);
    }
    return LayerStructure(k, k, std::move(elems));
}

/// Single-channel s×s convolution on p×p images, stride 1, zero padding
/// (s−1)/2, images vectorized row-major. Element j = fa·s + fb marks where
/// filter tap (fa, fb) multiplies an input pixel: output (a, b) reads input
/// (a + c − fa, b + c − fb) with c = (s−1)/2.
inline LayerStructure conv_basis(Eigen::Index p, Eigen::Index s) {
    if (s < 1 || s % 2 == 0) throw PreconditionError("conv_basis: filter side must be odd");
    if (s > p) throw PreconditionError("conv_basis: filter side exceeds image side");
    const Eigen::Index c = (s - 1) / 2;
    std::vector<LayerStructure::Element> elems;
    elems.reserve(static_cast<std::size_t>(s * s));
    for (Eigen::Index fa = 0; fa < s; ++fa) {
        for (Eigen::Index fb = 0; fb < s; ++fb) {
            LayerStructure::Element el;
            for (Eigen::Index a = 0; a < p; ++a) {
                for (Eigen::Index b = 0; b < p; ++b) {
                    const Eigen::Index ia = a + c - fa;
                    const Eigen::Index ib = b + c - fb;
                    if (ia >= 0 && ia < p && ib >= 0 && ib < p) el.push_back({a * p + b, ia * p + ib, 1.0});
                }
            }
            elems.push_back(std::move(el));
        }
    }
    return LayerStructure(p * p, p * p, std::move(elems));
}

/// One indicator per allowed entry (nonzero in mask), enumerated row-major.
inline LayerStructure sparse_basis(const Matrix& mask) {
    std::vector<LayerStructure::Element> elems;
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j)
            if (mask(i, j) != 0.0) elems.push_back({{i, j, 1.0}});
    if (elems.empty()) throw PreconditionError("sparse_basis: mask has no allowed entries");
    return LayerStructure(mask.rows(), mask.cols(), std::move(elems));
}

/// Orthogonal projection Σ_j (⟨m, A_j⟩/‖A_j‖²)·A_j.
inline Matrix project(const Matrix& m, const LayerStructure& s) {
    const Vector ip = s.inner_products(m);
    return s.materialize(ip.cwiseQuotient(s.norms_sq()));
}

/// Σ_j ⟨m, A_j⟩·A_j: the weight-space image of a gradient step taken on the
/// basis coefficients. Equals project() only for unit-norm bases.
inline Matrix gd_scaled_project(const Matrix& m, const LayerStructure& s) {
    return s.materialize(s.inner_products(m));
}

struct StructuredLayer {
    std::shared_ptr<const LayerStructure> structure;
    Vector coeffs;

    StructuredLayer(std::shared_ptr<const LayerStructure> s, Vector c) : structure(std::move(s)), coeffs(std::move(c)) {
        if (!structure) throw PreconditionError("StructuredLayer: null structure");
        require_shape(coeffs.size() == structure->dim(), "StructuredLayer: coefficient count mismatch");
        require_finite(coeffs, "StructuredLayer coeffs");
    }

    Matrix materialize() const { return structure->materialize(coeffs); }
};

inline LinearNetwork materialize(const std::vector<StructuredLayer>& layers) {
    std::vector<Matrix> ws;
    ws.reserve(layers.size());
    for (const auto& l : layers) ws.push_back(l.materialize());
    return LinearNetwork(std::move(ws));
}

struct StructuredLossGrad {
    double loss = 0.0;
    std::vector<Vector> coeff_grads;
};

/// Loss and ∂L/∂c_j = ⟨∂L/∂W_i, A_j⟩ for every layer, computed from sparse
/// layer matrices without forming any dense weight gradient.
namespace detail {

template <class W>
StructuredLossGrad structured_backprop(const std::vector<W>& ws, const std::vector<StructuredLayer>& layers,
                                       const Dataset& data, LossKind kind) {
    const std::size_t d = layers.size();
    require_shape(ws.front().cols() == data.x.rows(), "structured_loss_grad: input dimension mismatch");
    for (std::size_t i = 1; i < d; ++i) {
        require_shape(ws[i].cols() == ws[i - 1].rows(), "structured_loss_grad: layer shapes do not chain");
    }
    std::vector<Matrix> acts;
    acts.reserve(d + 1);
    acts.push_back(data.x);
    for (std::size_t i = 0; i < d; ++i) acts.push_back(ws[i] * acts.back());
    LossGrad lg = output_loss_grad(kind, acts.back(), data.y);
    const double inv_n = 1.0 / static_cast<double>(data.samples());

    StructuredLossGrad out;
    out.loss = lg.loss;
    out.coeff_grads.resize(d);
    Matrix delta = std::move(lg.dl_df);
    for (std::size_t i = d; i-- > 0;) {
        const auto& elems = layers[i].structure->elements();
        Vector g(static_cast<Eigen::Index>(elems.size()));
        const Matrix& in = acts[i];
        for (std::size_t j = 0; j < elems.size(); ++j) {
            double s = 0.0;
            for (const auto& e : elems[j]) s += e.value * delta.row(e.row).dot(in.row(e.col));
            g(static_cast<Eigen::Index>(j)) = inv_n * s;
        }
        out.coeff_grads[i] = std::move(g);
        if (i > 0) delta = ws[i].transpose() * delta;
    }
    return out;
}

} // namespace detail

/// Layers up to this many entries are multiplied densely.
inline constexpr Eigen::Index kDenseStructuredLimit = 4096;

inline StructuredLossGrad structured_loss_grad(const std::vector<StructuredLayer>& layers, const Dataset& data,
                                               LossKind kind) {
    if (layers.empty()) throw ShapeError("structured_loss_grad: no layers");
    const bool dense = std::all_of(layers.begin(), layers.end(), [](const StructuredLayer& l) {
        return l.structure->rows() * l.structure->cols() <= kDenseStructuredLimit;
    });
    if (dense) {
        std::vector<Matrix> ws;
        ws.reserve(layers.size());
        for (const auto& l : layers) ws.push_back(l.materialize());
        return detail::structured_backprop(ws, layers, data, kind);
    }
    std::vector<SparseMatrix> ws;
    ws.reserve(layers.size());
    for (const auto& l : layers) ws.push_back(l.structure->materialize_sparse(l.coeffs));
    return detail::structured_backprop(ws, layers, data, kind);
}

/// Gradient descent on the basis coefficients, all layers at pre-step values.
inline std::vector<StructuredLayer> structured_gd_step(const std::vector<StructuredLayer>& layers, const Dataset& data,
                                                       double gamma, LossKind kind = LossKind::mse) {
    const StructuredLossGrad g = structured_loss_grad(layers, data, kind);
    std::vector<StructuredLayer> next = layers;
    for (std::size_t i = 0; i < next.size(); ++i) next[i].coeffs -= gamma * g.coeff_grads[i];
    return next;
}

/// The same step in weight space: W_i ← W_i − γ·π_S(∂L/∂W_i) with dense gradients.
inline LinearNetwork projected_matrix_gd_step(const LinearNetwork& net, const std::vector<const LayerStructure*>& structs,
                                              const Dataset& data, double gamma, LossKind kind = LossKind::mse) {
    require_shape(structs.size() == net.depth(), "projected_matrix_gd_step: one structure per layer required");
    const LossAndGrads lg = loss_and_grads(net, data, kind);
    std::vector<Matrix> next = net.layers();
    for (std::size_t i = 0; i < next.size(); ++i) next[i] -= gamma * gd_scaled_project(lg.grads[i], *structs[i]);
    return LinearNetwork(std::move(next));
}

struct StructuredTrainResult {
    TrainTrace trace;
    std::vector<StructuredLayer> final_layers;
};

inline StructuredTrainResult train_structured(const std::vector<StructuredLayer>& init, const Dataset& data,
                                              const TrainConfig& cfg, LossKind kind = LossKind::mse) {
    if (!(cfg.learning_rate > 0.0)) throw PreconditionError("train_structured: learning rate must be positive");
    if (cfg.max_steps < 1 || cfg.record_every < 1) throw PreconditionError("train_structured: bad step settings");
    StructuredTrainResult res;
    res.trace.depth = init.size();
    const TraceRecorder rec(materialize(init).layers(), cfg.scores, cfg.record_scores, cfg.keep_snapshots);
    std::vector<StructuredLayer> layers = init;
    StructuredLossGrad g = structured_loss_grad(layers, data, kind);
    auto check = [](double loss, std::size_t step) {
        if (!std::isfinite(loss) || loss > kDivergenceLoss) {
            throw DivergenceError("train_structured: loss " + std::to_string(loss) + " at step " + std::to_string(step));
        }
    };
    check(g.loss, 0);
    bool stop = false;
    {
        const TraceRow& row = rec.record(res.trace, 0, g.loss, materialize(layers).layers());
        stop = cfg.stop_when && cfg.stop_when(row);
    }
    std::size_t step = 0;
    while (!stop && g.loss > cfg.loss_stop && step < cfg.max_steps) {
        for (std::size_t i = 0; i < layers.size(); ++i) layers[i].coeffs -= cfg.learning_rate * g.coeff_grads[i];
        ++step;
        g = structured_loss_grad(layers, data, kind);
        check(g.loss, step);
        const bool last = g.loss <= cfg.loss_stop || step == cfg.max_steps;
        if (step % cfg.record_every == 0 || last) {
            const TraceRow& row = rec.record(res.trace, step, g.loss, materialize(layers).layers());
            stop = cfg.stop_when && cfg.stop_when(row);
        }
    }
    res.trace.converged = g.loss <= cfg.loss_stop;
    res.trace.steps_run = step;
    res.trace.final_loss = g.loss;
    res.trace.final_net = materialize(layers);
    res.final_layers = std::move(layers);
    return res;
}

struct PinvReport {
    AlignmentScore last_vs_pinv;   // W_dᵀ against P
    AlignmentScore pinv_vs_first;  // P against W_1ᵀ
    double residual = 0.0;         // ‖Y − f(X)‖_F
    bool interpolates = false;
    Matrix pinv_map;               // P = YXᵀ(XXᵀ)⁻¹
};

inline constexpr double kPinvCutoff = 1e-10;

/// Compares the outer layers of a network with the least-squares map P = YXᵀ(XXᵀ)⁻¹.
/// An aligned interpolating network has both scores equal to 1.
inline PinvReport pinv_alignment_check(const LinearNetwork& net, const Dataset& data, double tol,
                                       const ScoreOptions& opts = {}) {
    const Eigen::Index k0 = data.x.rows();
    require_shape(net.input_dim() == k0 && net.output_dim() == data.y.rows(),
                  "pinv_alignment_check: data shape does not match network");
    if (data.samples() < k0) throw RankError("pinv_alignment_check: fewer samples than input dimensions");
    Eigen::Index rank = 0;
    const Matrix inv = psd_pinv(data.x * data.x.transpose(), kPinvCutoff, &rank);
    if (rank < k0) {
        throw RankError("pinv_alignment_check: XXᵀ has numerical rank " + std::to_string(rank) + " < " +
                        std::to_string(k0));
    }
    PinvReport rep;
    rep.pinv_map = data.y * data.x.transpose() * inv;
    const UsSvd p = svd(rep.pinv_map);
    const UsSvd last = svd(net.layers().back());
    const UsSvd first = svd(net.layers().front());
    rep.last_vs_pinv = alignment_score(last.u, p.u, last.sigma, p.sigma, opts);
    rep.pinv_vs_first = alignment_score(p.v, first.v, p.sigma, first.sigma, opts);
    rep.residual = (data.y - forward(net, data.x)).norm();
    rep.interpolates = rep.residual <= tol * std::max(1.0, data.y.norm());
    return rep;
}

enum class Feasibility { ruled_out, not_ruled_out };

/// C(m, 2), taken as 0 for m < 2.
inline std::int64_t choose2(std::int64_t m) { return m < 2 ? 0 : m * (m - 1) / 2; }

/// Alignment with an r-dimensional structure on generic k×n data is ruled out
/// iff r < k − 1 − C(k − n, 2).
inline Feasibility feasibility(std::int64_t r, std::int64_t k, std::int64_t n) {
    if (r < 1 || k < 1 || n < 1) throw PreconditionError("feasibility: r, k, n must be positive");
    return r < k - 1 - choose2(k - n) ? Feasibility::ruled_out : Feasibility::not_ruled_out;
}

inline const char* to_string(Feasibility f) {
    return f == Feasibility::ruled_out ? "ruled_out" : "not_ruled_out";
}

} // namespace align_lab
