#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "align_lab/alignment.hpp"
#include "align_lab/fastdyn.hpp"
#include "align_lab/mnist.hpp"
#include "align_lab/network.hpp"
#include "align_lab/report.hpp"
#include "align_lab/rng.hpp"
#include "align_lab/structured.hpp"

namespace align_lab {

inline constexpr double kToeplitzNoise = 0.05;
inline constexpr std::size_t kToeplitzMaxSteps = 600000;

struct ExperimentSpec {
    std::string name;
    std::uint64_t seed = 42;
    std::optional<std::size_t> steps;         // max steps; registry default when empty
    double lr = 1e-2;
    double loss_stop = 1e-4;
    std::optional<std::size_t> record_every;  // registry default when empty
    std::optional<std::filesystem::path> data_path;
    std::filesystem::path out_dir;
};

struct ExperimentInfo {
    std::string name;
    std::string description;
    std::size_t default_steps;
    std::size_t default_record_every;
};

inline const std::vector<ExperimentInfo>& registry() {
    static const std::vector<ExperimentInfo> r{
        {"fig1a", "9x9 Gaussian X, Y; 2 hidden layers of width 9; aligned init; MSE", 20000, 10},
        {"fig1b", "256 separable MNIST examples; 784-1024-64-10; aligned init; MSE", 2000, 100},
        {"fig1c", "256 separable MNIST examples; 784-1024-64-10; aligned init; cross-entropy", 2000, 100},
        {"fig2a", "Toeplitz 4x4 layers, depth 3, X = I, Gaussian Y; projected GD", kToeplitzMaxSteps, 1000},
        {"fig2b", "3x3 convolution layers on one 28x28 image, depth 3 autoencoder", 20000, 1000},
        {"condition-demo", "autoencoding data meeting the invariance condition, d = 3, k = 6", 20000, 10},
        {"rank1-demo", "rank-1 aligned init, logistic loss on separable 2-d data", 2000, 10},
    };
    return r;
}

inline const ExperimentInfo& experiment_info(const std::string& name) {
    for (const auto& e : registry())
        if (e.name == name) return e;
    std::string known;
    for (const auto& e : registry()) known += (known.empty() ? "" : ", ") + e.name;
    throw PreconditionError("unknown experiment '" + name + "' (known: " + known + ")");
}

inline void validate(const ExperimentSpec& spec) {
    experiment_info(spec.name);
    if (!(spec.lr > 0.0)) throw PreconditionError("learning rate must be positive");
    if (!(spec.loss_stop >= 0.0)) throw PreconditionError("loss_stop must be nonnegative");
    if (spec.steps && *spec.steps < 1) throw PreconditionError("steps must be at least 1");
    if (spec.record_every && *spec.record_every < 1) throw PreconditionError("record_every must be at least 1");
    if (spec.out_dir.empty()) throw PreconditionError("no output directory given");
}

inline nlohmann::json to_json(const ExperimentSpec& s) {
    nlohmann::json j;
    j["name"] = s.name;
    j["seed"] = s.seed;
    j["steps"] = s.steps ? nlohmann::json(*s.steps) : nlohmann::json(experiment_info(s.name).default_steps);
    j["lr"] = s.lr;
    j["loss_stop"] = s.loss_stop;
    j["record_every"] = s.record_every ? *s.record_every : experiment_info(s.name).default_record_every;
    j["data_path"] = s.data_path ? nlohmann::json(s.data_path->string()) : nlohmann::json(nullptr);
    j["out_dir"] = s.out_dir.string();
    return j;
}

/// Overlays the fields present in j onto base.
inline ExperimentSpec spec_from_json(const nlohmann::json& j, ExperimentSpec base = {}) {
    if (!j.is_object()) throw FormatError("experiment config must be a JSON object");
    try {
        if (j.contains("name")) base.name = j.at("name").get<std::string>();
        if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("steps")) base.steps = j.at("steps").get<std::size_t>();
        if (j.contains("lr")) base.lr = j.at("lr").get<double>();
        if (j.contains("loss_stop")) base.loss_stop = j.at("loss_stop").get<double>();
        if (j.contains("record_every")) base.record_every = j.at("record_every").get<std::size_t>();
        if (j.contains("data_path") && !j.at("data_path").is_null()) base.data_path = j.at("data_path").get<std::string>();
        if (j.contains("out_dir")) base.out_dir = j.at("out_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("experiment config: ") + e.what());
    }
    return base;
}

// ---------------------------------------------------------------------------
// Setups. Each consumes one Rng(seed) in a fixed order.

/// Aligned init with Q_0, Q_d from the canonical SVD of YXᵀ and identity
/// interior frames. Per layer (1..d) σ is drawn uniform in [0.5, 1] and sorted
/// descending; with `rescale`, all σ shrink by a common factor so that
/// Π_i σ_{i,k} ≤ 0.9·λ′_k/λ_k for every k with λ_k, λ′_k > 0.
inline std::pair<AlignedBasis, std::vector<Vector>> random_aligned_frames(const Dataset& data,
                                                                          const std::vector<Eigen::Index>& dims,
                                                                          Rng& rng, bool rescale) {
    const std::size_t d = dims.size() - 1;
    const UsSvd cross = svd(data.y * data.x.transpose());
    const AlignedBasis basis = AlignedBasis::with_ends(dims, cross.v, cross.u);
    std::vector<Vector> sig;
    for (std::size_t i = 1; i <= d; ++i) {
        Vector s(std::min(dims[i], dims[i - 1]));
        for (Eigen::Index k = 0; k < s.size(); ++k) s(k) = rng.uniform(0.5, 1.0);
        std::sort(s.data(), s.data() + s.size(), std::greater<>());
        sig.push_back(s);
    }
    if (rescale) {
        const Eigen::Index r = *std::min_element(dims.begin(), dims.end());
        const Vector lam = (cross.v.transpose() * data.x * data.x.transpose() * cross.v).diagonal();
        double c = 1.0;
        for (Eigen::Index k = 0; k < r; ++k) {
            const double lp = cross.sigma(k);
            if (!(lam(k) > 0.0) || !(lp > 0.0)) continue;
            double prod = 1.0;
            for (const auto& s : sig) prod *= s(k);
            c = std::min(c, 0.9 * (lp / lam(k)) / prod);
        }
        const double per_layer = std::pow(c, 1.0 / static_cast<double>(d));
        for (auto& s : sig) s *= per_layer;
    }
    return {basis, std::move(sig)};
}

struct DenseSetup {
    Dataset data;
    LinearNetwork init;
    LossKind loss = LossKind::mse;
    std::optional<AlignedBasis> basis;
    Metrics notes;
};

/// Draw order: X (9×9), Y (9×9), then σ for layers 1..3.
inline DenseSetup make_fig1a(std::uint64_t seed) {
    Rng rng(seed);
    Matrix x = rng.normal_matrix(9, 9);
    Matrix y = rng.normal_matrix(9, 9);
    DenseSetup s{Dataset(std::move(x), std::move(y)), LinearNetwork{}, LossKind::mse, std::nullopt, {}};
    auto [basis, sig] = random_aligned_frames(s.data, {9, 9, 9, 9}, rng, true);
    s.init = aligned_init(basis, sig);
    s.basis = basis;
    return s;
}

inline constexpr std::size_t kMnistSubset = 256;

/// Subset selection uses Rng(seed); the init draws from Rng(seed + 1).
inline DenseSetup make_fig1bc(std::uint64_t seed, const std::filesystem::path& data_dir, LossKind loss) {
    const auto [im, lb] = find_mnist_files(data_dir);
    const MnistData mn = load_mnist(im, lb);
    const std::size_t count = std::min<std::size_t>(kMnistSubset, mn.labels.size());
    SubsetResult sub = select_separable_subset(mn.images, mn.labels, count, seed);
    DenseSetup s{sub.data, LinearNetwork{}, loss, std::nullopt, {}};
    s.notes.push_back({"subset_requested", std::to_string(count)});
    s.notes.push_back({"subset_achieved", std::to_string(sub.indices.size())});
    s.notes.push_back({"label_encoding", "one_hot_argmax_separable"});
    Rng rng(seed + 1);
    auto [basis, sig] = random_aligned_frames(s.data, {kMnistPixels, 1024, 64, kMnistClasses}, rng,
                                              loss == LossKind::mse);
    s.init = aligned_init(basis, sig);
    s.basis = basis;
    return s;
}

/// Autoencoding data (X Gaussian 6×10, Y = X) with the invariance condition,
/// aligned frames from find_condition and a balanced start whose products
/// S_k(0) = 0.5·0.9^k decrease with the eigenvalue order.
struct ConditionSetup {
    Dataset data;
    DataCondition cond;
    AlignedBasis basis;
    std::vector<Vector> sigmas;
    LinearNetwork init;
};

inline ConditionSetup make_condition_demo(std::uint64_t seed) {
    Rng rng(seed);
    const Matrix x = rng.normal_matrix(6, 10);
    auto cond = find_condition(x, x, 6);
    if (!cond) throw DecompositionError("condition-demo: no condition found for autoencoding data");
    const std::vector<Eigen::Index> dims{6, 6, 6, 6};
    AlignedBasis basis = AlignedBasis::with_ends(dims, cond->v, cond->u);
    Vector prod(6);
    for (Eigen::Index k = 0; k < 6; ++k) prod(k) = 0.5 * std::pow(0.9, static_cast<double>(k));
    const Matrix bal = balanced_sigmas(prod, 3);
    std::vector<Vector> sig;
    for (Eigen::Index i = 0; i < 3; ++i) sig.push_back(bal.row(i).transpose());
    LinearNetwork init = aligned_init(basis, sig);
    return {Dataset(x, x), *cond, std::move(basis), std::move(sig), std::move(init)};
}

/// Linearly separable 2-d data with ±1 labels: points at distance ≥ 0.5 from a
/// random separating line through the origin. Draw order: normal direction,
/// then per point a label coin, a margin and an offset along the line.
inline Dataset separable_2d(Rng& rng, Eigen::Index n) {
    const Vector w = rng.unit_vector(2);
    Vector t(2);
    t << -w(1), w(0);
    Matrix x(2, n), y(1, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double label = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double margin = rng.uniform(0.5, 2.0);
        const double along = rng.uniform(-2.0, 2.0);
        x.col(j) = label * margin * w + along * t;
        y(0, j) = label;
    }
    return Dataset(std::move(x), std::move(y));
}

inline constexpr std::uint64_t kRank1InitSalt = 0x5EED;

/// Data from Rng(seed); the rank-1 init uses seed ^ salt.
inline DenseSetup make_rank1_demo(std::uint64_t seed) {
    Rng rng(seed);
    Dataset data = separable_2d(rng, 40);
    LinearNetwork init = rank1_aligned_init({2, 4, 4, 1}, seed ^ kRank1InitSalt, 0.5);
    return {std::move(data), std::move(init), LossKind::logistic, std::nullopt, {}};
}

struct StructuredSetup {
    Dataset data;
    std::vector<StructuredLayer> init;
    Metrics notes;
};


/// X = I₄, Y Gaussian 4×4, then per layer coefficients identity + noise.
inline StructuredSetup make_fig2a(std::uint64_t seed) {
    Rng rng(seed);
    const Matrix y = rng.normal_matrix(4, 4);
    const auto s = std::make_shared<const LayerStructure>(toeplitz_basis(4));
    std::vector<StructuredLayer> layers;
    for (int i = 0; i < 3; ++i) {
        Vector c = rng.normal_vector(s->dim()) * kToeplitzNoise;
        c(0) += 1.0;
        layers.emplace_back(s, std::move(c));
    }
    return {Dataset(Matrix::Identity(4, 4), y), std::move(layers), {}};
}

/// Sum of two Gaussian bumps on a 28×28 grid, row-major. Draw order per bump:
/// centre row, centre column, width, amplitude.
inline Vector synthetic_image(Rng& rng) {
    Vector img = Vector::Zero(kMnistPixels);
    for (int b = 0; b < 2; ++b) {
        const double ca = rng.uniform(6.0, 22.0);
        const double cb = rng.uniform(6.0, 22.0);
        const double w = rng.uniform(2.0, 4.0);
        const double amp = rng.uniform(0.5, 1.0);
        for (Eigen::Index a = 0; a < kMnistSide; ++a)
            for (Eigen::Index c = 0; c < kMnistSide; ++c) {
                const double r2 = (a - ca) * (a - ca) + (c - cb) * (c - cb);
                img(a * kMnistSide + c) += amp * std::exp(-r2 / (2.0 * w * w));
            }
    }
    return img;
}

inline constexpr double kConvCentre = 0.8;
inline constexpr double kConvNoise = 0.05;
inline constexpr std::size_t kConvScoreDirections = 32;

/// One image (first MNIST training image when a data directory is given,
/// otherwise synthetic), scaled to unit norm and autoencoded by three 3×3
/// convolution layers.
inline StructuredSetup make_fig2b(std::uint64_t seed, const std::optional<std::filesystem::path>& data_dir) {
    Rng rng(seed);
    StructuredSetup out;
    Vector img;
    if (data_dir) {
        const auto [im, lb] = find_mnist_files(*data_dir);
        img = load_mnist(im, lb).images.col(0);
        out.notes.push_back({"image", "mnist_first"});
    } else {
        img = synthetic_image(rng);
        out.notes.push_back({"image", "synthetic_two_bumps"});
    }
    img /= img.norm();
    const auto s = std::make_shared<const LayerStructure>(conv_basis(kMnistSide, 3));
    for (int i = 0; i < 3; ++i) {
        Vector c = rng.normal_vector(9) * kConvNoise;
        c(4) += kConvCentre;
        out.init.emplace_back(s, std::move(c));
    }
    out.data = Dataset(img, img);
    return out;
}

// ---------------------------------------------------------------------------

struct RunReport {
    TrainTrace trace;
    Metrics metrics;
    nlohmann::json metadata;
    std::vector<std::filesystem::path> files;
};

namespace detail {

inline TrainConfig config_for(const ExperimentSpec& spec) {
    const ExperimentInfo& info = experiment_info(spec.name);
    TrainConfig cfg;
    cfg.learning_rate = spec.lr;
    cfg.loss_stop = spec.loss_stop;
    cfg.max_steps = spec.steps.value_or(info.default_steps);
    cfg.record_every = spec.record_every.value_or(info.default_record_every);
    return cfg;
}

inline double min_of(const std::vector<double>& v) {
    double m = 1.0;
    for (double x : v) m = std::min(m, x);
    return m;
}

inline void add_trace_metrics(Metrics& m, const TrainTrace& t) {
    m.push_back({"converged", t.converged ? "true" : "false"});
    m.push_back({"steps_run", std::to_string(t.steps_run)});
    m.push_back({"final_loss", format_double(t.final_loss)});
    m.push_back({"rows", std::to_string(t.rows.size())});
    if (t.rows.empty()) return;
    m.push_back({"initial_loss", format_double(t.rows.front().loss)});
    if (!t.rows.front().adjacent.empty()) {
        m.push_back({"initial_min_adjacent", format_double(min_of(t.rows.front().adjacent))});
        m.push_back({"final_min_adjacent", format_double(min_of(t.rows.back().adjacent))});
        double worst = 1.0;
        for (const auto& r : t.rows) worst = std::min(worst, min_of(r.adjacent));
        m.push_back({"worst_min_adjacent", format_double(worst)});
    }
    if (!t.rows.back().inv_u.empty()) {
        m.push_back({"final_min_invU", format_double(min_of(t.rows.back().inv_u))});
        m.push_back({"final_min_invV", format_double(min_of(t.rows.back().inv_v))});
    }
}

inline std::vector<std::filesystem::path> write_plots(const TrainTrace& t, const std::string& name,
                                                      const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    std::vector<double> steps;
    for (const auto& r : t.rows) steps.push_back(static_cast<double>(r.step));
    auto column = [&](auto pick) {
        std::vector<double> v;
        for (const auto& r : t.rows) v.push_back(pick(r));
        return v;
    };
    emit_svg(name + ": training loss", "step", {{"loss", steps, column([](const TraceRow& r) { return r.loss; })}},
             dir / "loss.svg");
    files.push_back(dir / "loss.svg");
    const std::size_t d = t.depth;
    if (!t.rows.empty() && !t.rows.front().adjacent.empty()) {
        std::vector<Series> s;
        for (std::size_t i = 0; i + 1 < d; ++i)
            s.push_back({"align_" + std::to_string(i + 1) + "_" + std::to_string(i + 2), steps,
                         column([i](const TraceRow& r) { return r.adjacent[i]; })});
        emit_svg(name + ": adjacent alignment", "step", s, dir / "alignment.svg");
        files.push_back(dir / "alignment.svg");
    }
    if (!t.rows.empty() && !t.rows.front().inv_u.empty()) {
        std::vector<Series> s;
        for (std::size_t i = 0; i < d; ++i)
            s.push_back({"invU_" + std::to_string(i + 1), steps, column([i](const TraceRow& r) { return r.inv_u[i]; })});
        for (std::size_t i = 0; i < d; ++i)
            s.push_back({"invV_" + std::to_string(i + 1), steps, column([i](const TraceRow& r) { return r.inv_v[i]; })});
        emit_svg(name + ": singular-vector invariance", "step", s, dir / "invariance.svg");
        files.push_back(dir / "invariance.svg");
    }
    return files;
}

inline std::optional<std::filesystem::path> default_data_dir(const ExperimentSpec& spec) {
    if (spec.data_path) return spec.data_path;
    if (const char* env = std::getenv("ALIGN_LAB_DATA_DIR"); env && *env) return std::filesystem::path(env);
    return std::nullopt;
}

} // namespace detail

/// Runs a registry experiment and writes trace.csv, metrics.csv, SVG plots and
/// run.json (metadata, including wall time) into spec.out_dir.
inline RunReport run(const ExperimentSpec& spec) {
    validate(spec);
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig cfg = detail::config_for(spec);
    RunReport rep;
    Metrics& m = rep.metrics;
    m.push_back({"experiment", spec.name});
    m.push_back({"seed", std::to_string(spec.seed)});
    m.push_back({"lr", format_double(spec.lr)});
    m.push_back({"loss_stop", format_double(spec.loss_stop)});
    m.push_back({"max_steps", std::to_string(cfg.max_steps)});
    const auto data_dir = detail::default_data_dir(spec);

    if (spec.name == "fig1a" || spec.name == "fig1b" || spec.name == "fig1c" || spec.name == "rank1-demo") {
        DenseSetup s;
        if (spec.name == "fig1a") {
            s = make_fig1a(spec.seed);
        } else if (spec.name == "rank1-demo") {
            s = make_rank1_demo(spec.seed);
        } else {
            if (!data_dir) {
                throw DataMissingError(spec.name + " needs MNIST IDX files (--data-dir or ALIGN_LAB_DATA_DIR); "
                                                   "there is no synthetic fallback for the classification runs");
            }
            s = make_fig1bc(spec.seed, *data_dir, spec.name == "fig1b" ? LossKind::mse : LossKind::cross_entropy);
        }
        m.push_back({"loss_kind", to_string(s.loss)});
        for (const auto& n : s.notes) m.push_back(n);
        rep.trace = train(s.init, s.data, cfg, s.loss);
    } else if (spec.name == "condition-demo") {
        ConditionSetup s = make_condition_demo(spec.seed);
        cfg.keep_snapshots = true;
        rep.trace = train(s.init, s.data, cfg);
        const MonitorReport mon = strong_alignment_monitor(rep.trace, s.basis, 1e-8);
        m.push_back({"loss_kind", "mse"});
        m.push_back({"worst_alignment_score", format_double(mon.worst_alignment)});
        m.push_back({"worst_strong_alignment_score", format_double(mon.worst_strong)});
        m.push_back({"alignment_violation_step",
                     mon.first_alignment_violation ? std::to_string(*mon.first_alignment_violation) : "none"});
        m.push_back({"strong_violation_step",
                     mon.first_strong_violation ? std::to_string(*mon.first_strong_violation) : "none"});
        rep.trace.snapshots.clear();
    } else {
        StructuredSetup s = spec.name == "fig2a" ? make_fig2a(spec.seed) : make_fig2b(spec.seed, data_dir);
        if (spec.name == "fig2b") {
            cfg.scores.max_directions = kConvScoreDirections;
            m.push_back({"score_directions", std::to_string(kConvScoreDirections)});
        }
        for (const auto& n : s.notes) m.push_back(n);
        m.push_back({"loss_kind", "mse"});
        rep.trace = train_structured(s.init, s.data, cfg).trace;
        if (spec.name == "fig2a") {
            const PinvReport p = pinv_alignment_check(rep.trace.final_net, s.data, 1e-2);
            m.push_back({"pinv_last_score", format_double(p.last_vs_pinv.value)});
            m.push_back({"pinv_first_score", format_double(p.pinv_vs_first.value)});
            m.push_back({"pinv_residual", format_double(p.residual)});
        }
    }
    detail::add_trace_metrics(m, rep.trace);

    const auto& out = spec.out_dir;
    emit_csv(rep.trace, out / "trace.csv");
    rep.files.push_back(out / "trace.csv");
    emit_metrics(m, out / "metrics.csv");
    rep.files.push_back(out / "metrics.csv");
    for (auto& f : detail::write_plots(rep.trace, spec.name, out)) rep.files.push_back(std::move(f));

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.metadata["spec"] = to_json(spec);
    rep.metadata["converged"] = rep.trace.converged;
    rep.metadata["steps_run"] = rep.trace.steps_run;
    rep.metadata["wall_time_seconds"] = wall;
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [k, v] : m) metrics[k] = v;
    rep.metadata["metrics"] = metrics;
    std::vector<std::string> names;
    for (const auto& f : rep.files) names.push_back(f.filename().string());
    names.push_back("run.json");
    rep.metadata["files"] = names;
    atomic_write(out / "run.json", rep.metadata.dump(2) + "\n");
    rep.files.push_back(out / "run.json");
    return rep;
}

} // namespace align_lab
