#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "align_lab/alignment.hpp"
#include "align_lab/linalg.hpp"
#include "align_lab/network.hpp"
#include "align_lab/rng.hpp"

namespace align_lab {

/// Singular-value state of a strongly aligned network: sigmas(i, k) is the k-th
/// retained singular value of layer i (d × r), with the per-direction data
/// coefficients λ′_k (cross term) and λ_k (input Gram term).
class SvState {
public:
    SvState(Matrix sigmas, Vector lambda_prime, Vector lambda, double gamma_over_n)
        : sigmas_(std::move(sigmas)), lambda_prime_(std::move(lambda_prime)), lambda_(std::move(lambda)),
          gamma_over_n_(gamma_over_n) {
        require_shape(sigmas_.rows() >= 1 && sigmas_.cols() >= 1, "SvState: empty sigma table");
        require_shape(lambda_prime_.size() == sigmas_.cols() && lambda_.size() == sigmas_.cols(),
                      "SvState: lambda vectors must have r = " + std::to_string(sigmas_.cols()) + " entries");
        require_finite(sigmas_, "SvState sigmas");
        if (!(gamma_over_n_ > 0.0)) throw PreconditionError("SvState: gamma/n must be positive");
        for (Eigen::Index k = 0; k < lambda_.size(); ++k) {
            if (lambda_(k) < 0.0) throw PreconditionError("SvState: lambda_" + std::to_string(k) + " is negative");
            if (lambda_(k) == 0.0 && lambda_prime_(k) != 0.0) {
                throw PreconditionError("SvState: lambda_" + std::to_string(k) +
                                        " = 0 while lambda'_k != 0; permute directions so zero patterns agree");
            }
        }
    }

    Eigen::Index depth() const { return sigmas_.rows(); }
    Eigen::Index rank() const { return sigmas_.cols(); }
    const Matrix& sigmas() const { return sigmas_; }
    const Vector& lambda_prime() const { return lambda_prime_; }
    const Vector& lambda() const { return lambda_; }
    double gamma_over_n() const { return gamma_over_n_; }

    /// S_k = Π_i σ_{i,k}
    Vector products() const { return sigmas_.colwise().prod().transpose(); }

    SvState with_sigmas(Matrix s) const { return SvState(std::move(s), lambda_prime_, lambda_, gamma_over_n_); }

private:
    Matrix sigmas_;
    Vector lambda_prime_;
    Vector lambda_;
    double gamma_over_n_;
};

/// Builds the state from a data condition: top r singular values of each layer,
/// λ and λ′ from the condition, γ/n from the learning rate and sample count.
inline SvState sv_state_from(const DataCondition& cond, const std::vector<Vector>& layer_sigmas, double gamma,
                             Eigen::Index samples) {
    const Eigen::Index r = cond.r;
    Matrix s(static_cast<Eigen::Index>(layer_sigmas.size()), r);
    for (std::size_t i = 0; i < layer_sigmas.size(); ++i) {
        require_shape(layer_sigmas[i].size() >= r, "sv_state_from: layer has fewer than r singular values");
        s.row(static_cast<Eigen::Index>(i)) = layer_sigmas[i].head(r).transpose();
    }
    return SvState(std::move(s), cond.lambda_prime, cond.lambda, gamma / static_cast<double>(samples));
}

/// Random admissible state: σ in (0.2, 0.6), λ in (0.5, 2), and λ′ set so the
/// target exceeds the starting product by a factor in (1.5, 20).
inline SvState random_admissible_state(Rng& rng, Eigen::Index d, Eigen::Index r, double gamma_over_n = 1.0) {
    Matrix s(d, r);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index k = 0; k < r; ++k) s(i, k) = rng.uniform(0.2, 0.6);
    Vector lam(r), lp(r);
    for (Eigen::Index k = 0; k < r; ++k) {
        lam(k) = rng.uniform(0.5, 2.0);
        lp(k) = lam(k) * s.col(k).prod() * rng.uniform(1.5, 20.0);
    }
    return SvState(std::move(s), std::move(lp), std::move(lam), gamma_over_n);
}

/// σ_{i,k} ← σ_{i,k} + (γ/n)·Π_{j≠i} σ_{j,k}·(λ′_k − λ_k·Π_j σ_{j,k}), all at pre-step values.
inline SvState sv_step(const SvState& s) {
    const Matrix& sig = s.sigmas();
    const Eigen::Index d = sig.rows();
    const Eigen::Index r = sig.cols();
    Matrix next = sig;
    for (Eigen::Index k = 0; k < r; ++k) {
        double full = 1.0;
        for (Eigen::Index i = 0; i < d; ++i) full *= sig(i, k);
        const double resid = s.lambda_prime()(k) - s.lambda()(k) * full;
        for (Eigen::Index i = 0; i < d; ++i) {
            double others = 1.0;
            for (Eigen::Index j = 0; j < d; ++j)
                if (j != i) others *= sig(j, k);
            next(i, k) = sig(i, k) + s.gamma_over_n() * others * resid;
        }
    }
    if (!next.allFinite()) throw DivergenceError("sv_step: non-finite singular values");
    return s.with_sigmas(std::move(next));
}

struct SvTrajectory {
    std::vector<SvState> states;  // steps + 1 entries, states[0] is the input
    Matrix products;              // (steps + 1) × r, row t holds S^{(t)}
};

inline SvTrajectory sv_trajectory(const SvState& init, std::size_t steps) {
    SvTrajectory tr;
    tr.states.reserve(steps + 1);
    tr.products.resize(static_cast<Eigen::Index>(steps + 1), init.rank());
    tr.states.push_back(init);
    tr.products.row(0) = init.products().transpose();
    for (std::size_t t = 1; t <= steps; ++t) {
        tr.states.push_back(sv_step(tr.states.back()));
        tr.products.row(static_cast<Eigen::Index>(t)) = tr.states.back().products().transpose();
    }
    return tr;
}

/// Interpolating limit U·[diag(λ′_k/λ_k)]·Vᵀ (top r block; zero where λ_k = 0).
inline Matrix limit_solution(const DataCondition& cond) {
    const Eigen::Index r = cond.r;
    Vector ratio = Vector::Zero(r);
    for (Eigen::Index k = 0; k < r; ++k) {
        const double lam = cond.lambda(k);
        const double lp = cond.lambda_prime(k);
        const double scale = std::max(1.0, cond.lambda.cwiseAbs().maxCoeff());
        if (std::abs(lam) <= 1e-12 * scale) {
            if (std::abs(lp) > 1e-12 * std::max(1.0, cond.lambda_prime.cwiseAbs().maxCoeff())) {
                throw InfeasibleError("limit_solution: lambda_" + std::to_string(k) + " = 0 but lambda'_" +
                                      std::to_string(k) + " != 0");
            }
            continue;
        }
        ratio(k) = lp / lam;
    }
    return cond.u * diag_embed(ratio, cond.u.rows(), cond.v.rows()) * cond.v.transpose();
}

namespace detail {

/// Returns the first k that breaks the learning-rate preconditions, if any.
inline std::optional<std::string> lr_precondition_failure(const Matrix& sigmas0, const Vector& lambda,
                                                          const Vector& lambda_prime) {
    for (Eigen::Index k = 0; k < sigmas0.cols(); ++k) {
        for (Eigen::Index i = 0; i < sigmas0.rows(); ++i) {
            if (!(sigmas0(i, k) > 0.0)) {
                return "sigma(" + std::to_string(i) + ", " + std::to_string(k) + ") is not positive";
            }
        }
        if (lambda(k) == 0.0) continue;
        const double prod = sigmas0.col(k).prod();
        if (!(prod < lambda_prime(k) / lambda(k))) {
            return "k = " + std::to_string(k) + ": product " + std::to_string(prod) + " is not below lambda'/lambda = " +
                   std::to_string(lambda_prime(k) / lambda(k));
        }
    }
    return std::nullopt;
}

} // namespace detail

/// Largest step size with a linear-convergence guarantee:
/// (n·ln2/d)·min_k min_i σ_{i,k}²·λ_k/λ′_k², over k with λ_k ≠ 0.
inline double lr_bound(const Matrix& sigmas0, const Vector& lambda, const Vector& lambda_prime, Eigen::Index n,
                       Eigen::Index d) {
    require_shape(sigmas0.rows() == d, "lr_bound: sigma table must have d rows");
    require_shape(lambda.size() == sigmas0.cols() && lambda_prime.size() == sigmas0.cols(),
                  "lr_bound: lambda vectors must have r entries");
    if (n < 1 || d < 1) throw PreconditionError("lr_bound: n and d must be positive");
    if (auto why = detail::lr_precondition_failure(sigmas0, lambda, lambda_prime)) {
        throw PreconditionError("lr_bound: " + *why);
    }
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < sigmas0.cols(); ++k) {
        if (lambda(k) == 0.0) continue;
        const double smin = sigmas0.col(k).minCoeff();
        best = std::min(best, smin * smin * lambda(k) / (lambda_prime(k) * lambda_prime(k)));
    }
    if (!std::isfinite(best)) throw PreconditionError("lr_bound: every lambda_k is zero");
    return static_cast<double>(n) * std::numbers::ln2 / static_cast<double>(d) * best;
}

struct CertificateReport {
    bool applicable = false;
    bool passed = false;
    /// max over (k, t) of gap_t / (envelope_t + slack); at most 1 iff passed
    double worst_ratio = 0.0;
    std::optional<std::pair<Eigen::Index, std::size_t>> violation;  // (k, t)
    std::string reason;
};

inline constexpr double kEnvelopeSlack = 1e-13;

/// Checks target_k − S_k^{(t)} ≤ (target_k − S_k^{(0)})·(1 − d·η_k·(S_k^{(0)})^{2−2/d})^t
/// with η_k = γλ_k/n, for every k with λ_k ≠ 0. Refuses (applicable = false)
/// when the start state does not meet the convergence preconditions,
/// including the step-size bound. `samples` is n.
inline CertificateReport convergence_certificate(const SvTrajectory& traj, const SvState& state0, Eigen::Index samples) {
    CertificateReport rep;
    const Eigen::Index d = state0.depth();
    if (auto why = detail::lr_precondition_failure(state0.sigmas(), state0.lambda(), state0.lambda_prime())) {
        rep.reason = *why;
        return rep;
    }
    const double bound = lr_bound(state0.sigmas(), state0.lambda(), state0.lambda_prime(), samples, d);
    const double gamma = state0.gamma_over_n() * static_cast<double>(samples);
    if (gamma > bound * (1.0 + 1e-12)) {
        rep.reason = "learning rate " + std::to_string(gamma) + " exceeds bound " + std::to_string(bound);
        return rep;
    }
    rep.applicable = true;
    rep.passed = true;
    const Vector s0 = state0.products();
    for (Eigen::Index k = 0; k < state0.rank(); ++k) {
        const double lam = state0.lambda()(k);
        if (lam == 0.0) continue;
        const double target = state0.lambda_prime()(k) / lam;
        const double eta = state0.gamma_over_n() * lam;
        const double rate = 1.0 - static_cast<double>(d) * eta * std::pow(s0(k), 2.0 - 2.0 / static_cast<double>(d));
        const double gap0 = target - s0(k);
        const double slack = kEnvelopeSlack * std::max(1.0, std::abs(target));
        double envelope = gap0;
        for (Eigen::Index t = 0; t < traj.products.rows(); ++t) {
            if (t > 0) envelope *= rate;
            const double gap = target - traj.products(t, k);
            rep.worst_ratio = std::max(rep.worst_ratio, gap / (std::max(envelope, 0.0) + slack));
            if (gap > envelope + slack && rep.passed) {
                rep.passed = false;
                rep.violation = std::make_pair(k, static_cast<std::size_t>(t));
            }
        }
    }
    return rep;
}

/// Runs full gradient descent from aligned_init(basis, sigmas0) and the reduced
/// singular-value dynamics side by side; returns the largest Frobenius gap
/// between the full end-to-end map and U·diag(Π_i σ_i)·Vᵀ over all steps.
inline double equivalence_check(const DataCondition& cond, const AlignedBasis& basis,
                                const std::vector<Vector>& sigmas0, double gamma, std::size_t steps,
                                const Dataset& data) {
    LinearNetwork net = aligned_init(basis, sigmas0);
    SvState state = sv_state_from(cond, sigmas0, gamma, data.samples());
    const Matrix& u = basis.q(basis.depth());
    const Matrix& v = basis.q(0);
    auto deviation = [&](const LinearNetwork& n, const SvState& s) {
        const Matrix reduced = u * diag_embed(s.products(), u.rows(), v.rows()) * v.transpose();
        return (end_to_end(n) - reduced).norm();
    };
    double worst = deviation(net, state);
    for (std::size_t t = 0; t < steps; ++t) {
        net = gd_step(net, data, gamma);
        state = sv_step(state);
        worst = std::max(worst, deviation(net, state));
    }
    return worst;
}

/// σ_{i,k} = S_k^{1/d} for every layer (balanced start).
inline Matrix balanced_sigmas(const Vector& products, Eigen::Index d) {
    Matrix s(d, products.size());
    for (Eigen::Index k = 0; k < products.size(); ++k) {
        const double p = products(k);
        const double root = std::copysign(std::pow(std::abs(p), 1.0 / static_cast<double>(d)), p);
        s.col(k).setConstant(std::abs(root));
        if (p < 0.0) s(0, k) = root;
    }
    return s;
}

} // namespace align_lab
