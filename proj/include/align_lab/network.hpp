#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "align_lab/linalg.hpp"

namespace align_lab {

/// f(x) = W_d ··· W_1 x. Layer i (0-based here) has shape k_{i+1} × k_i.
class LinearNetwork {
public:
    LinearNetwork() = default;

    explicit LinearNetwork(std::vector<Matrix> layers) : layers_(std::move(layers)) { validate(); }

    std::size_t depth() const { return layers_.size(); }
    const std::vector<Matrix>& layers() const { return layers_; }
    const Matrix& layer(std::size_t i) const { return layers_.at(i); }
    Matrix& layer(std::size_t i) { return layers_.at(i); }

    /// [k_0, k_1, …, k_d]
    std::vector<Eigen::Index> dims() const {
        std::vector<Eigen::Index> d;
        d.reserve(layers_.size() + 1);
        d.push_back(layers_.front().cols());
        for (const auto& w : layers_) d.push_back(w.rows());
        return d;
    }

    Eigen::Index input_dim() const { return layers_.front().cols(); }
    Eigen::Index output_dim() const { return layers_.back().rows(); }

private:
    void validate() const {
        if (layers_.empty()) throw ShapeError("LinearNetwork: need at least one layer");
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            require_finite(layers_[i], "LinearNetwork");
            if (i > 0 && layers_[i].cols() != layers_[i - 1].rows()) {
                throw ShapeError("LinearNetwork: layer " + std::to_string(i + 1) + " is " + shape_str(layers_[i]) +
                                 " but layer " + std::to_string(i) + " is " + shape_str(layers_[i - 1]));
            }
        }
    }

    std::vector<Matrix> layers_;
};

/// Paired training matrices: x is k_0 × n, y is k_d × n.
struct Dataset {
    Matrix x;
    Matrix y;

    Dataset() = default;
    Dataset(Matrix x_, Matrix y_) : x(std::move(x_)), y(std::move(y_)) {
        require_shape(x.cols() == y.cols() && x.cols() >= 1,
                      "Dataset: x is " + shape_str(x) + ", y is " + shape_str(y));
        require_finite(x, "Dataset x");
        require_finite(y, "Dataset y");
    }

    Eigen::Index samples() const { return x.cols(); }
};

inline Matrix forward(const LinearNetwork& net, const Matrix& x) {
    require_shape(x.rows() == net.input_dim(),
                  "forward: input has " + std::to_string(x.rows()) + " rows, network expects " +
                      std::to_string(net.input_dim()));
    Matrix a = x;
    for (const auto& w : net.layers()) a = w * a;
    return a;
}

inline Matrix end_to_end(const LinearNetwork& net) {
    Matrix p = net.layer(0);
    for (std::size_t i = 1; i < net.depth(); ++i) p = net.layer(i) * p;
    return p;
}

inline double mse_loss(const LinearNetwork& net, const Dataset& data) {
    require_shape(data.y.rows() == net.output_dim(), "mse_loss: target rows do not match network output");
    const Matrix r = data.y - forward(net, data.x);
    return r.squaredNorm() / (2.0 * static_cast<double>(data.samples()));
}

/// Gradients of every layer given dL/dF (k_d × n, per-sample, unaveraged):
/// ∂L/∂W_i = (1/n)·(W_d···W_{i+1})ᵀ·dL_dF·(W_{i−1}···W_1 x)ᵀ.
inline std::vector<Matrix> all_gradients(const LinearNetwork& net, const Matrix& x, const Matrix& dl_df) {
    require_shape(x.rows() == net.input_dim(), "all_gradients: input dimension mismatch");
    require_shape(dl_df.rows() == net.output_dim() && dl_df.cols() == x.cols(),
                  "all_gradients: dL/dF is " + shape_str(dl_df) + ", expected " +
                      std::to_string(net.output_dim()) + "x" + std::to_string(x.cols()));
    const std::size_t d = net.depth();
    std::vector<Matrix> acts;
    acts.reserve(d);
    acts.push_back(x);
    for (std::size_t i = 0; i + 1 < d; ++i) acts.push_back(net.layer(i) * acts.back());
    const double inv_n = 1.0 / static_cast<double>(x.cols());
    std::vector<Matrix> grads(d);
    Matrix delta = dl_df;
    for (std::size_t i = d; i-- > 0;) {
        grads[i].noalias() = inv_n * delta * acts[i].transpose();
        if (i > 0) delta = net.layer(i).transpose() * delta;
    }
    return grads;
}

inline Matrix general_gradient(const LinearNetwork& net, const Matrix& x, const Matrix& dl_df, std::size_t layer) {
    if (layer >= net.depth()) throw ShapeError("general_gradient: layer index out of range");
    return all_gradients(net, x, dl_df)[layer];
}

inline Matrix mse_gradient(const LinearNetwork& net, const Dataset& data, std::size_t layer) {
    require_shape(data.y.rows() == net.output_dim(), "mse_gradient: target rows do not match network output");
    const Matrix neg_residual = forward(net, data.x) - data.y;
    return general_gradient(net, data.x, neg_residual, layer);
}

struct LossGrad {
    double loss = 0.0;
    Matrix dl_df;
};

/// (1/2n)‖Y − F‖², with dL/dF = −(Y − F) per sample.
inline LossGrad mse_loss_grad(const Matrix& outputs, const Matrix& targets) {
    require_shape(outputs.rows() == targets.rows() && outputs.cols() == targets.cols(),
                  "mse_loss_grad: outputs " + shape_str(outputs) + " vs targets " + shape_str(targets));
    LossGrad out;
    out.dl_df = outputs - targets;
    out.loss = out.dl_df.squaredNorm() / (2.0 * static_cast<double>(outputs.cols()));
    return out;
}

/// Mean softmax cross-entropy over columns; dL/dF = softmax(logits) − labels.
inline LossGrad softmax_xent_grad(const Matrix& logits, const Matrix& labels) {
    require_shape(logits.rows() == labels.rows() && logits.cols() == labels.cols(),
                  "softmax_xent_grad: logits " + shape_str(logits) + " vs labels " + shape_str(labels));
    require_finite(logits, "softmax_xent_grad logits");
    LossGrad out;
    out.dl_df.resize(logits.rows(), logits.cols());
    double total = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const double mx = logits.col(j).maxCoeff();
        const Vector e = (logits.col(j).array() - mx).exp().matrix();
        const double z = e.sum();
        const double log_z = mx + std::log(z);
        total += -(labels.col(j).array() * (logits.col(j).array() - log_z)).sum();
        out.dl_df.col(j) = e / z - labels.col(j);
    }
    out.loss = total / static_cast<double>(logits.cols());
    return out;
}

/// Mean logistic loss log(1 + exp(−y·f)) for labels in {−1, +1} on a 1-d output.
inline LossGrad logistic_loss_grad(const Matrix& outputs, const Matrix& labels) {
    require_shape(outputs.rows() == 1 && labels.rows() == 1 && outputs.cols() == labels.cols(),
                  "logistic_loss_grad: expects 1×n outputs and labels");
    LossGrad out;
    out.dl_df.resize(1, outputs.cols());
    double total = 0.0;
    for (Eigen::Index j = 0; j < outputs.cols(); ++j) {
        const double m = labels(0, j) * outputs(0, j);
        // log1p(exp(−m)) without overflow
        total += m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
        const double s = 1.0 / (1.0 + std::exp(m));
        out.dl_df(0, j) = -labels(0, j) * s;
    }
    out.loss = total / static_cast<double>(outputs.cols());
    return out;
}

enum class LossKind { mse, cross_entropy, logistic };

inline const char* to_string(LossKind k) {
    switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::logistic: return "logistic";
    }
    return "?";
}

inline LossGrad output_loss_grad(LossKind kind, const Matrix& outputs, const Matrix& targets) {
    switch (kind) {
    case LossKind::mse: return mse_loss_grad(outputs, targets);
    case LossKind::cross_entropy: return softmax_xent_grad(outputs, targets);
    case LossKind::logistic: return logistic_loss_grad(outputs, targets);
    }
    throw Error("output_loss_grad: unknown loss kind");
}

struct LossAndGrads {
    double loss = 0.0;
    std::vector<Matrix> grads;
};

inline LossAndGrads loss_and_grads(const LinearNetwork& net, const Dataset& data, LossKind kind) {
    const Matrix f = forward(net, data.x);
    LossGrad lg = output_loss_grad(kind, f, data.y);
    return {lg.loss, all_gradients(net, data.x, lg.dl_df)};
}

/// Matrix sensing: L = (1/2n)·Σ_i (y_i − Tr(M_iᵀ P))² with P = W_d···W_1.
inline LossAndGrads sensing_loss_grad(const LinearNetwork& net, std::span<const Matrix> sensors, const Vector& targets) {
    if (sensors.empty()) throw ShapeError("sensing_loss_grad: no sensors");
    require_shape(static_cast<Eigen::Index>(sensors.size()) == targets.size(),
                  "sensing_loss_grad: sensor/target count mismatch");
    const Matrix p = end_to_end(net);
    const double n = static_cast<double>(sensors.size());
    Matrix g = Matrix::Zero(p.rows(), p.cols());
    double loss = 0.0;
    for (std::size_t i = 0; i < sensors.size(); ++i) {
        require_shape(sensors[i].rows() == p.rows() && sensors[i].cols() == p.cols(),
                      "sensing_loss_grad: sensor " + std::to_string(i) + " is " + shape_str(sensors[i]) +
                          ", end-to-end map is " + shape_str(p));
        const double r = targets(static_cast<Eigen::Index>(i)) - frobenius_inner(sensors[i], p);
        loss += r * r;
        g -= r * sensors[i];
    }
    loss /= 2.0 * n;
    g /= n;
    // ∂L/∂W_j = (W_d···W_{j+1})ᵀ · ∂L/∂P · (W_{j−1}···W_1)ᵀ
    const std::size_t d = net.depth();
    std::vector<Matrix> pre(d);
    pre[0] = Matrix::Identity(net.input_dim(), net.input_dim());
    for (std::size_t j = 1; j < d; ++j) pre[j] = net.layer(j - 1) * pre[j - 1];
    LossAndGrads out{loss, std::vector<Matrix>(d)};
    Matrix back = g;
    for (std::size_t j = d; j-- > 0;) {
        out.grads[j] = back * pre[j].transpose();
        if (j > 0) back = net.layer(j).transpose() * back;
    }
    return out;
}

/// W_i ← W_i − γ·grads_i for all layers at once.
inline LinearNetwork apply_step(const LinearNetwork& net, const std::vector<Matrix>& grads, double gamma) {
    require_shape(grads.size() == net.depth(), "apply_step: gradient count mismatch");
    std::vector<Matrix> next = net.layers();
    for (std::size_t i = 0; i < next.size(); ++i) next[i] -= gamma * grads[i];
    return LinearNetwork(std::move(next));
}

inline LinearNetwork gd_step(const LinearNetwork& net, const Dataset& data, double gamma, LossKind kind = LossKind::mse) {
    if (!(gamma >= 0.0)) throw PreconditionError("gd_step: learning rate must be nonnegative");
    return apply_step(net, loss_and_grads(net, data, kind).grads, gamma);
}

inline constexpr double kDivergenceLoss = 1e12;

struct TraceRow {
    std::size_t step = 0;
    double loss = 0.0;
    std::vector<double> adjacent;  // d−1 entries
    std::vector<double> inv_u;     // d entries
    std::vector<double> inv_v;     // d entries
};

struct TrainTrace {
    std::size_t depth = 0;
    std::vector<TraceRow> rows;
    std::vector<LinearNetwork> snapshots;  // parallel to rows when kept
    bool converged = false;
    std::size_t steps_run = 0;
    double final_loss = 0.0;
    LinearNetwork final_net;
};

struct TrainConfig {
    double learning_rate = 1e-2;
    std::size_t max_steps = 10000;
    double loss_stop = 1e-4;
    std::size_t record_every = 100;
    ScoreOptions scores{};
    bool record_scores = true;
    bool keep_snapshots = false;
    /// Evaluated after every recorded row; returning true ends training early.
    std::function<bool(const TraceRow&)> stop_when;
};

/// Builds trace rows against a fixed initial network, whose decompositions
/// are computed once.
class TraceRecorder {
public:
    TraceRecorder(const std::vector<Matrix>& initial, ScoreOptions opts, bool with_scores, bool keep_snapshots)
        : opts_(opts), with_scores_(with_scores), keep_(keep_snapshots) {
        if (with_scores_) initial_ = svd_all(initial);
    }

    const TraceRow& record(TrainTrace& trace, std::size_t step, double loss, const std::vector<Matrix>& layers) const {
        TraceRow row;
        row.step = step;
        row.loss = loss;
        if (with_scores_) {
            const std::vector<UsSvd> dec = svd_all(layers);
            if (dec.size() >= 2) {
                for (const auto& s : adjacent_scores_from(dec, opts_)) row.adjacent.push_back(s.value);
            }
            for (const auto& s : invariance_from(dec, initial_, opts_)) {
                row.inv_u.push_back(s.u.value);
                row.inv_v.push_back(s.v.value);
            }
        }
        trace.rows.push_back(std::move(row));
        if (keep_) trace.snapshots.emplace_back(layers);
        return trace.rows.back();
    }

private:
    std::vector<UsSvd> initial_;
    ScoreOptions opts_;
    bool with_scores_;
    bool keep_;
};

using Objective = std::function<LossAndGrads(const LinearNetwork&)>;

/// Gradient descent with simultaneous layer updates until loss ≤ loss_stop or max_steps.
inline TrainTrace train(const LinearNetwork& init, const Objective& objective, const TrainConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw PreconditionError("train: learning rate must be positive");
    if (cfg.max_steps < 1) throw PreconditionError("train: max_steps must be at least 1");
    if (cfg.record_every < 1) throw PreconditionError("train: record_every must be at least 1");

    TrainTrace trace;
    trace.depth = init.depth();
    const TraceRecorder rec(init.layers(), cfg.scores, cfg.record_scores, cfg.keep_snapshots);
    LinearNetwork net = init;
    LossAndGrads lg = objective(net);
    auto check = [](double loss, std::size_t step) {
        if (!std::isfinite(loss) || loss > kDivergenceLoss) {
            throw DivergenceError("train: loss " + std::to_string(loss) + " at step " + std::to_string(step));
        }
    };
    check(lg.loss, 0);
    bool stop = false;
    {
        const TraceRow& row = rec.record(trace, 0, lg.loss, net.layers());
        stop = cfg.stop_when && cfg.stop_when(row);
    }
    std::size_t step = 0;
    while (!stop && lg.loss > cfg.loss_stop && step < cfg.max_steps) {
        net = apply_step(net, lg.grads, cfg.learning_rate);
        ++step;
        lg = objective(net);
        check(lg.loss, step);
        const bool last = lg.loss <= cfg.loss_stop || step == cfg.max_steps;
        if (step % cfg.record_every == 0 || last) {
            const TraceRow& row = rec.record(trace, step, lg.loss, net.layers());
            stop = cfg.stop_when && cfg.stop_when(row);
        }
    }
    trace.converged = lg.loss <= cfg.loss_stop;
    trace.steps_run = step;
    trace.final_loss = lg.loss;
    trace.final_net = std::move(net);
    return trace;
}

inline TrainTrace train(const LinearNetwork& init, const Dataset& data, const TrainConfig& cfg,
                        LossKind kind = LossKind::mse) {
    require_shape(data.x.rows() == init.input_dim() && data.y.rows() == init.output_dim(),
                  "train: data shape does not match network");
    return train(init, [&](const LinearNetwork& n) { return loss_and_grads(n, data, kind); }, cfg);
}

} // namespace align_lab
