#include <gtest/gtest.h>

#include <cmath>

#include "align_lab/gradcheck.hpp"
#include "align_lab/network.hpp"
#include "align_lab/rng.hpp"

using namespace align_lab;

namespace {

LinearNetwork random_net(Rng& rng, const std::vector<Eigen::Index>& dims, double scale = 0.5) {
    std::vector<Matrix> ws;
    for (std::size_t i = 1; i < dims.size(); ++i) ws.push_back(rng.normal_matrix(dims[i], dims[i - 1], scale));
    return LinearNetwork(std::move(ws));
}

Matrix one_hot(Rng& rng, Eigen::Index classes, Eigen::Index n) {
    Matrix y = Matrix::Zero(classes, n);
    for (Eigen::Index j = 0; j < n; ++j) y(static_cast<Eigen::Index>(rng.below(classes)), j) = 1.0;
    return y;
}

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }

} // namespace

TEST(Network, RejectsIncompatibleChain) {
    EXPECT_THROW(LinearNetwork({Matrix::Ones(2, 3), Matrix::Ones(2, 3)}), ShapeError);
    EXPECT_THROW(LinearNetwork(std::vector<Matrix>{}), ShapeError);
    Matrix bad = Matrix::Ones(2, 2);
    bad(0, 0) = INFINITY;
    EXPECT_THROW(LinearNetwork({bad}), NonFiniteError);
}

TEST(Network, DatasetRequiresMatchingColumns) {
    EXPECT_THROW(Dataset(Matrix::Ones(2, 3), Matrix::Ones(1, 2)), ShapeError);
}

TEST(Forward, Examples) {
    Rng rng(1);
    const Matrix x = rng.normal_matrix(3, 5);
    EXPECT_EQ(forward(LinearNetwork({Matrix::Identity(3, 3), Matrix::Identity(3, 3)}), x), x);
    EXPECT_EQ(forward(LinearNetwork({m1(3), m1(2)}), m1(1))(0, 0), 6.0);
    EXPECT_THROW(forward(LinearNetwork({Matrix::Ones(2, 4)}), x), ShapeError);
}

TEST(Forward, MatchesCollapsedProduct) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const LinearNetwork net = random_net(rng, {4, 6, 3, 5});
        const Matrix x = rng.normal_matrix(4, 7);
        Matrix p = Matrix::Identity(4, 4);
        for (const auto& w : net.layers()) p = w * p;
        EXPECT_LE((forward(net, x) - end_to_end(net) * x).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE((end_to_end(net) - p).cwiseAbs().maxCoeff(), 1e-12);
    }
    const Matrix w = rng.normal_matrix(2, 3);
    EXPECT_EQ(end_to_end(LinearNetwork({w})), w);
}

TEST(MseLoss, Examples) {
    EXPECT_DOUBLE_EQ(mse_loss(LinearNetwork({m1(0)}), Dataset(m1(1), m1(1))), 0.5);
    Rng rng(3);
    const LinearNetwork net = random_net(rng, {3, 2});
    const Matrix x = rng.normal_matrix(3, 4);
    EXPECT_EQ(mse_loss(net, Dataset(x, forward(net, x))), 0.0);
}

TEST(MseLoss, MatchesScalarLoop) {
    Rng rng(4);
    const LinearNetwork net = random_net(rng, {3, 4, 2});
    const Dataset data(rng.normal_matrix(3, 6), rng.normal_matrix(2, 6));
    double s = 0.0;
    for (Eigen::Index k = 0; k < 6; ++k) {
        const Vector f = net.layer(1) * (net.layer(0) * data.x.col(k));
        for (Eigen::Index i = 0; i < 2; ++i) s += (data.y(i, k) - f(i)) * (data.y(i, k) - f(i));
    }
    EXPECT_NEAR(mse_loss(net, data), s / 12.0, 1e-12);
}

TEST(MseGradient, ScalarExample) {
    const LinearNetwork net({m1(0)});
    EXPECT_EQ(mse_gradient(net, Dataset(m1(1), m1(1)), 0)(0, 0), -1.0);
}

TEST(MseGradient, VanishesAtInterpolation) {
    Rng rng(5);
    const LinearNetwork net = random_net(rng, {3, 3, 2});
    const Matrix x = rng.normal_matrix(3, 4);
    const Dataset data(x, forward(net, x));
    for (std::size_t i = 0; i < 2; ++i) EXPECT_LE(mse_gradient(net, data, i).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MseGradient, MatchesFiniteDifferences) {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const LinearNetwork net = random_net(rng, {4, 5, 3, 2});
        const Dataset data(rng.normal_matrix(4, 6), rng.normal_matrix(2, 6));
        const auto fd = finite_difference_gradients(net, [&](const LinearNetwork& n) { return mse_loss(n, data); });
        std::vector<Matrix> an;
        for (std::size_t i = 0; i < 3; ++i) an.push_back(mse_gradient(net, data, i));
        EXPECT_LE(max_relative_error(an, fd), 1e-6);
    }
}

TEST(GeneralGradient, ConsistentWithMse) {
    Rng rng(7);
    const LinearNetwork net = random_net(rng, {3, 4, 2});
    const Dataset data(rng.normal_matrix(3, 5), rng.normal_matrix(2, 5));
    const Matrix dl = forward(net, data.x) - data.y;
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(general_gradient(net, data.x, dl, i), mse_gradient(net, data, i));
    EXPECT_EQ(general_gradient(net, data.x, Matrix::Zero(2, 5), 1).norm(), 0.0);
}

TEST(GeneralGradient, LogisticMatchesFiniteDifferences) {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const LinearNetwork net = random_net(rng, {3, 4, 1});
        Matrix labels(1, 8);
        for (Eigen::Index j = 0; j < 8; ++j) labels(0, j) = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const Dataset data(rng.normal_matrix(3, 8), labels);
        const auto lg = loss_and_grads(net, data, LossKind::logistic);
        const auto fd = finite_difference_gradients(
            net, [&](const LinearNetwork& n) { return logistic_loss_grad(forward(n, data.x), labels).loss; });
        EXPECT_LE(max_relative_error(lg.grads, fd), 1e-6);
    }
}

TEST(SoftmaxXent, Examples) {
    const Matrix labels = Matrix::Identity(5, 5);
    EXPECT_NEAR(softmax_xent_grad(Matrix::Zero(5, 5), labels).loss, std::log(5.0), 1e-14);
    EXPECT_NEAR(softmax_xent_grad(labels * 1e6, labels).loss, 0.0, 1e-12);
    Matrix bad = Matrix::Zero(5, 5);
    bad(0, 0) = NAN;
    EXPECT_THROW(softmax_xent_grad(bad, labels), NonFiniteError);
}

TEST(SoftmaxXent, MatchesDefinition) {
    Rng rng(9);
    const Matrix logits = rng.normal_matrix(4, 6, 3.0);
    const Matrix labels = one_hot(rng, 4, 6);
    double total = 0.0;
    Matrix grad(4, 6);
    for (Eigen::Index j = 0; j < 6; ++j) {
        double z = 0.0;
        for (Eigen::Index i = 0; i < 4; ++i) z += std::exp(logits(i, j));
        for (Eigen::Index i = 0; i < 4; ++i) {
            total -= labels(i, j) * std::log(std::exp(logits(i, j)) / z);
            grad(i, j) = std::exp(logits(i, j)) / z - labels(i, j);
        }
    }
    const LossGrad lg = softmax_xent_grad(logits, labels);
    EXPECT_NEAR(lg.loss, total / 6.0, 1e-10);
    EXPECT_LE((lg.dl_df - grad).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SoftmaxXent, NetworkGradientMatchesFiniteDifferences) {
    Rng rng(10);
    for (int trial = 0; trial < 10; ++trial) {
        const LinearNetwork net = random_net(rng, {5, 6, 4});
        const Dataset data(rng.normal_matrix(5, 7), one_hot(rng, 4, 7));
        const auto lg = loss_and_grads(net, data, LossKind::cross_entropy);
        const auto fd = finite_difference_gradients(
            net, [&](const LinearNetwork& n) { return softmax_xent_grad(forward(n, data.x), data.y).loss; });
        EXPECT_LE(max_relative_error(lg.grads, fd), 1e-6);
    }
}

TEST(Sensing, ScalarExample) {
    const std::vector<Matrix> sensors{m1(1)};
    const auto lg = sensing_loss_grad(LinearNetwork({m1(0)}), sensors, Vector::Ones(1));
    EXPECT_DOUBLE_EQ(lg.loss, 0.5);
    EXPECT_DOUBLE_EQ(lg.grads[0](0, 0), -1.0);
}

TEST(Sensing, ZeroAtExactMeasurements) {
    Rng rng(11);
    const LinearNetwork net = random_net(rng, {3, 3, 3});
    std::vector<Matrix> sensors;
    Vector y(4);
    for (int i = 0; i < 4; ++i) {
        sensors.push_back(rng.normal_matrix(3, 3));
        y(i) = frobenius_inner(sensors.back(), end_to_end(net));
    }
    const auto lg = sensing_loss_grad(net, sensors, y);
    EXPECT_LE(lg.loss, 1e-28);
    for (const auto& g : lg.grads) EXPECT_LE(g.cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Sensing, MatchesFiniteDifferences) {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const LinearNetwork net = random_net(rng, {3, 3, 3, 3});
        std::vector<Matrix> sensors;
        for (int i = 0; i < 5; ++i) sensors.push_back(rng.normal_matrix(3, 3));
        const Vector y = rng.normal_vector(5);
        const auto lg = sensing_loss_grad(net, sensors, y);
        const auto fd = finite_difference_gradients(
            net, [&](const LinearNetwork& n) { return sensing_loss_grad(n, sensors, y).loss; });
        EXPECT_LE(max_relative_error(lg.grads, fd), 1e-6);
    }
}

TEST(GdStep, ZeroRateLeavesNetUnchanged) {
    Rng rng(13);
    const LinearNetwork net = random_net(rng, {3, 2});
    const Dataset data(rng.normal_matrix(3, 4), rng.normal_matrix(2, 4));
    EXPECT_EQ(gd_step(net, data, 0.0).layer(0), net.layer(0));
}

TEST(GdStep, ScalarExample) {
    const LinearNetwork next = gd_step(LinearNetwork({m1(0)}), Dataset(m1(1), m1(1)), 1.0);
    EXPECT_EQ(next.layer(0)(0, 0), 1.0);
    EXPECT_EQ(mse_loss(next, Dataset(m1(1), m1(1))), 0.0);
}

TEST(GdStep, UpdatesAreSimultaneous) {
    Rng rng(14);
    const LinearNetwork net = random_net(rng, {3, 3, 2}, 1.0);
    const Dataset data(rng.normal_matrix(3, 4), rng.normal_matrix(2, 4));
    const double g = 0.1;
    const LinearNetwork sim = gd_step(net, data, g);
    const Matrix w1 = net.layer(0) - g * mse_gradient(net, data, 0);
    EXPECT_LE((sim.layer(0) - w1).norm(), 1e-14);
    EXPECT_LE((sim.layer(1) - (net.layer(1) - g * mse_gradient(net, data, 1))).norm(), 1e-14);
    // sequential (Gauss–Seidel) update of layer 2 after layer 1 differs
    const LinearNetwork half({w1, net.layer(1)});
    const Matrix w2_seq = net.layer(1) - g * mse_gradient(half, data, 1);
    EXPECT_GT((sim.layer(1) - w2_seq).norm(), 1e-8);
}

TEST(Train, StopsAtLossThresholdAndRecords) {
    Rng rng(15);
    const LinearNetwork net = random_net(rng, {3, 3}, 0.1);
    const Dataset data(Matrix::Identity(3, 3), rng.normal_matrix(3, 3));
    TrainConfig cfg;
    cfg.learning_rate = 0.5;
    cfg.record_every = 5;
    const TrainTrace t = train(net, data, cfg);
    EXPECT_TRUE(t.converged);
    EXPECT_LE(t.final_loss, cfg.loss_stop);
    ASSERT_GE(t.rows.size(), 2u);
    EXPECT_EQ(t.rows.front().step, 0u);
    EXPECT_EQ(t.rows.back().step, t.steps_run);
    for (std::size_t i = 1; i < t.rows.size(); ++i) EXPECT_GT(t.rows[i].step, t.rows[i - 1].step);
    EXPECT_EQ(t.rows.front().inv_u.size(), 1u);
}

TEST(Train, DivergenceIsReported) {
    const LinearNetwork net({Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0)});
    const Dataset data(Matrix::Constant(1, 1, 10.0), Matrix::Constant(1, 1, -10.0));
    TrainConfig cfg;
    cfg.learning_rate = 1.0;
    EXPECT_THROW(train(net, data, cfg), DivergenceError);
}

TEST(Train, RejectsNonPositiveRate) {
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    EXPECT_THROW(train(LinearNetwork({m1(1)}), Dataset(m1(1), m1(1)), cfg), PreconditionError);
}
