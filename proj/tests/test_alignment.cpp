#include <gtest/gtest.h>

#include "align_lab/alignment.hpp"
#include "align_lab/rng.hpp"

using namespace align_lab;

namespace {

std::vector<Vector> constant_sigmas(const std::vector<Eigen::Index>& dims, double s) {
    std::vector<Vector> out;
    for (std::size_t i = 1; i < dims.size(); ++i) out.push_back(Vector::Constant(std::min(dims[i], dims[i - 1]), s));
    return out;
}

} // namespace

TEST(AlignedInit, IdentityFramesGiveIdentityLayers) {
    const std::vector<Eigen::Index> dims{3, 3, 3};
    const auto basis = AlignedBasis::with_ends(dims, Matrix::Identity(3, 3), Matrix::Identity(3, 3));
    const LinearNetwork net = aligned_init(basis, constant_sigmas(dims, 1.0));
    for (const auto& w : net.layers()) EXPECT_EQ(w, Matrix::Identity(3, 3));
}

TEST(AlignedInit, RandomFramesAreAlignedAndCollapseCorrectly) {
    Rng rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const std::vector<Eigen::Index> dims{5, 4, 6, 3};
        std::vector<Matrix> q;
        for (auto k : dims) q.push_back(rng.orthonormal(k));
        const AlignedBasis basis(q);
        std::vector<Vector> sig;
        for (std::size_t i = 1; i < dims.size(); ++i) {
            Vector s(std::min(dims[i], dims[i - 1]));
            for (Eigen::Index j = 0; j < s.size(); ++j) s(j) = 2.0 - 0.3 * j + 0.01 * rng.uniform();
            sig.push_back(s);
        }
        const LinearNetwork net = aligned_init(basis, sig);
        for (const auto& a : layer_adjacent_scores(net.layers())) EXPECT_GE(a.value, 1.0 - 1e-10);
        // end-to-end = Q_d · (Π Σ_i) · Q_0ᵀ
        Matrix core = diag_embed(sig[0], dims[1], dims[0]);
        for (std::size_t i = 1; i < sig.size(); ++i) core = diag_embed(sig[i], dims[i + 1], dims[i]) * core;
        EXPECT_LE((end_to_end(net) - q.back() * core * q.front().transpose()).norm(), 1e-12);
    }
}

TEST(AlignedInit, RejectsWrongSigmaLength) {
    const std::vector<Eigen::Index> dims{3, 2};
    const auto basis = AlignedBasis::with_ends(dims, Matrix::Identity(3, 3), Matrix::Identity(2, 2));
    EXPECT_THROW(aligned_init(basis, {Vector::Ones(3)}), ShapeError);
}

TEST(AlignedBasis, RejectsNonOrthonormalFrame) {
    EXPECT_THROW(AlignedBasis({Matrix::Identity(2, 2), Matrix::Ones(2, 2)}), PreconditionError);
}

TEST(VerifyCondition, AutoencodingWithLeftSingularVectors) {
    Rng rng(2);
    const Matrix x = rng.normal_matrix(5, 8);
    const Matrix u = svd(x).u;
    EXPECT_TRUE(verify_condition(u, u, x, x, 5, kConditionTol));
}

TEST(VerifyCondition, FactorizationWithSingularFactorsOfY) {
    Rng rng(3);
    const Matrix y = rng.normal_matrix(4, 4);
    const UsSvd s = svd(y);
    EXPECT_TRUE(verify_condition(s.u, s.v, Matrix::Identity(4, 4), y, 4, kConditionTol));
}

TEST(VerifyCondition, RandomDataWithIdentityFails) {
    Rng rng(4);
    const Matrix x = rng.normal_matrix(9, 9);
    const Matrix y = rng.normal_matrix(9, 9);
    EXPECT_FALSE(verify_condition(Matrix::Identity(9, 9), Matrix::Identity(9, 9), x, y, 9, kConditionTol));
}

TEST(FindCondition, AutoencodingAlwaysFound) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index k = 2 + static_cast<Eigen::Index>(rng.below(11));
        const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(14));
        const Matrix x = rng.normal_matrix(k, n);
        const auto c = find_condition(x, x, k);
        ASSERT_TRUE(c.has_value()) << "k=" << k << " n=" << n;
        EXPECT_TRUE(verify_condition(c->u, c->v, x, x, k, kConditionTol));
        EXPECT_GE(c->lambda.minCoeff(), 0.0);
    }
}

TEST(FindCondition, FactorizationAlwaysFoundAndRecoversY) {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index k = 2 + static_cast<Eigen::Index>(rng.below(11));
        const Matrix y = rng.normal_matrix(k, k);
        const Matrix x = Matrix::Identity(k, k);
        const auto c = find_condition(x, y, k);
        ASSERT_TRUE(c.has_value());
        EXPECT_TRUE(verify_condition(c->u, c->v, x, y, k, kConditionTol));
        // U diag(λ′) Vᵀ reproduces Y since λ = 1
        EXPECT_LE((c->u * c->lambda_prime.asDiagonal() * c->v.transpose() - y).norm(), 1e-9 * y.norm());
    }
}

TEST(FindCondition, RandomSquareDataNotFound) {
    Rng rng(7);
    int found = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index k = 2 + static_cast<Eigen::Index>(rng.below(8));
        const Matrix x = rng.normal_matrix(k, k);
        const Matrix y = rng.normal_matrix(k, k);
        if (find_condition(x, y, k)) ++found;
    }
    EXPECT_LE(found, 1);
}

TEST(FindCondition, RectangularChainUsesTopBlock) {
    Rng rng(8);
    // k_0 = 6, k_d = 4, r = 3: Y = U·diag(s)·V₀ᵀ·X with V₀ the eigenvectors of XXᵀ
    const Matrix x = rng.normal_matrix(6, 12);
    const Matrix v0 = sym_eigen_desc(x * x.transpose()).vectors;
    const Vector s = (Vector(4) << 2.0, 1.5, 1.0, 0.5).finished();
    const Matrix y = rng.orthonormal(4) * diag_embed(s, 4, 6) * v0.transpose() * x;
    const auto c = find_condition(x, y, 3);
    ASSERT_TRUE(c.has_value());
    EXPECT_TRUE(verify_condition(c->u, c->v, x, y, 3, kConditionTol));
    EXPECT_EQ(c->lambda_prime.size(), 3);
}

TEST(SensingCondition, SharedFramesFound) {
    Rng rng(9);
    const Matrix u = rng.orthonormal(4);
    const Matrix v = rng.orthonormal(4);
    std::vector<Matrix> sensors;
    for (int i = 0; i < 5; ++i) sensors.push_back(u * rng.normal_vector(4).asDiagonal() * v.transpose());
    const auto b = check_sensing_condition(sensors);
    ASSERT_TRUE(b.has_value());
    for (const auto& m : sensors) EXPECT_TRUE(is_diagonal(b->u.transpose() * m * b->v, kConditionTol));
}

TEST(SensingCondition, IndependentSensorsNotFound) {
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const std::vector<Matrix> sensors{rng.normal_matrix(4, 4), rng.normal_matrix(4, 4)};
        EXPECT_FALSE(check_sensing_condition(sensors).has_value());
    }
}

TEST(SensingCondition, SingleSensorAlwaysFound) {
    Rng rng(11);
    const std::vector<Matrix> sensors{rng.normal_matrix(5, 5)};
    EXPECT_TRUE(check_sensing_condition(sensors).has_value());
    EXPECT_THROW(check_sensing_condition(std::span<const Matrix>{}), ShapeError);
}

TEST(Rank1Init, LayersAreRankOneAndAligned) {
    const std::vector<Eigen::Index> dims{2, 5, 4, 1};
    const LinearNetwork net = rank1_aligned_init(dims, 123);
    EXPECT_EQ(net.layer(0).norm(), 0.0);
    for (std::size_t i = 1; i < net.depth(); ++i) {
        const Vector s = svd(net.layer(i)).sigma;
        EXPECT_NEAR(s(0), 1.0, 1e-12);
        if (s.size() > 1) {
            EXPECT_LE(s(1), 1e-12);
        }
    }
    for (const auto& a : layer_adjacent_scores(net.layers())) EXPECT_GE(a.value, 1.0 - 1e-12);
    EXPECT_THROW(rank1_aligned_init({2, 3, 2}, 1), ShapeError);
}

TEST(Rank1Init, SeededAndReproducible) {
    const auto a = rank1_aligned_init({3, 4, 1}, 9);
    const auto b = rank1_aligned_init({3, 4, 1}, 9);
    EXPECT_EQ(a.layer(1), b.layer(1));
}

TEST(Monitor, EmptyTraceGivesEmptyReport) {
    const std::vector<Eigen::Index> dims{2, 2};
    const auto basis = AlignedBasis::with_ends(dims, Matrix::Identity(2, 2), Matrix::Identity(2, 2));
    const MonitorReport r = strong_alignment_monitor(TrainTrace{}, basis, 1e-8);
    EXPECT_TRUE(r.rows.empty());
    EXPECT_FALSE(r.first_alignment_violation);
}

TEST(Monitor, RequiresSnapshots) {
    const std::vector<Eigen::Index> dims{2, 2};
    const auto basis = AlignedBasis::with_ends(dims, Matrix::Identity(2, 2), Matrix::Identity(2, 2));
    TrainTrace t;
    t.rows.push_back(TraceRow{});
    EXPECT_THROW(strong_alignment_monitor(t, basis, 1e-8), PreconditionError);
}

TEST(Monitor, ConditionDataStaysInvariant) {
    Rng rng(12);
    const Matrix x = rng.normal_matrix(4, 8);
    const auto c = find_condition(x, x, 4);
    ASSERT_TRUE(c);
    const std::vector<Eigen::Index> dims{4, 4, 4, 4};
    const auto basis = AlignedBasis::with_ends(dims, c->v, c->u, {rng.orthonormal(4), rng.orthonormal(4)});
    // σ per index decreasing in λ so orders stay consistent with the targets
    std::vector<Vector> sig(3, Vector(4));
    for (int i = 0; i < 3; ++i) sig[static_cast<std::size_t>(i)] << 0.8, 0.7, 0.6, 0.5;
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.max_steps = 300;
    cfg.loss_stop = 0.0;
    cfg.record_every = 10;
    cfg.keep_snapshots = true;
    const TrainTrace t = train(aligned_init(basis, sig), Dataset(x, x), cfg);
    const MonitorReport rep = strong_alignment_monitor(t, basis, 1e-8);
    EXPECT_FALSE(rep.first_alignment_violation) << rep.worst_alignment;
    EXPECT_FALSE(rep.first_strong_violation) << rep.worst_strong;
    EXPECT_LE(rep.rows.back().off_diagonal, 1e-8);
}

TEST(Monitor, RandomDataIsFlagged) {
    Rng rng(13);
    const Matrix x = rng.normal_matrix(4, 4);
    const Matrix y = rng.normal_matrix(4, 4);
    const UsSvd s = svd(y * x.transpose());
    const std::vector<Eigen::Index> dims{4, 4, 4, 4};
    const auto basis = AlignedBasis::with_ends(dims, s.v, s.u);
    std::vector<Vector> sig(3, Vector(4));
    for (auto& v : sig) v << 0.9, 0.8, 0.7, 0.6;
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.max_steps = 500;
    cfg.record_every = 10;
    cfg.keep_snapshots = true;
    const TrainTrace t = train(aligned_init(basis, sig), Dataset(x, y), cfg);
    const MonitorReport rep = strong_alignment_monitor(t, basis, 1e-8);
    EXPECT_TRUE(rep.first_strong_violation.has_value());
}
