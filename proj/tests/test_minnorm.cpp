#include <gtest/gtest.h>

#include "align_lab/minnorm.hpp"
#include "align_lab/rng.hpp"

using namespace align_lab;

TEST(MinNorm, ScalarCase) {
    const Factorization f = min_norm_factorization(Matrix::Constant(1, 1, 4.0));
    EXPECT_DOUBLE_EQ(f.w1(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(f.w2(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(f.norm_sum, 8.0);
}

TEST(MinNorm, ReconstructsAlignedAndBalanced) {
    Rng rng(1);
    for (auto [m, n] : {std::pair{5, 5}, {3, 6}, {6, 2}}) {
        const Matrix p = rng.normal_matrix(m, n);
        const Eigen::Index q = std::min(m, n);
        for (const auto& w : {Matrix(Matrix::Identity(q, q)), rng.orthonormal(q)}) {
            const Factorization f = min_norm_factorization(p, w);
            EXPECT_LE((f.w2 * f.w1 - p).norm(), 1e-10 * std::max(1.0, p.norm()));
            EXPECT_NEAR(f.norm_sum, 2.0 * svd(p).sigma.sum(), 1e-10 * f.norm_sum);
            EXPECT_LE((f.w1 * f.w1.transpose() - f.w2.transpose() * f.w2).norm(), 1e-10 * p.norm());
            const std::vector<Matrix> layers{f.w1, f.w2};
            EXPECT_GE(layer_adjacent_scores(layers).front().value, 1.0 - 1e-10);
        }
    }
}

TEST(MinNorm, RejectsBadInnerFactor) {
    EXPECT_THROW(min_norm_factorization(Matrix::Ones(3, 3), Matrix(Matrix::Identity(2, 2))), ShapeError);
    EXPECT_THROW(min_norm_factorization(Matrix::Ones(2, 2), Matrix(Matrix::Ones(2, 2))), PreconditionError);
}

TEST(NormBound, ScaledReparameterizationIsWorse) {
    Rng rng(2);
    const Matrix p = rng.normal_matrix(4, 4);
    const Factorization f = min_norm_factorization(p);
    const Matrix w1 = 0.5 * f.w1;
    const Matrix w2 = 2.0 * f.w2;
    EXPECT_GT(w1.squaredNorm() + w2.squaredNorm(), f.norm_sum + 1e-6);
}

TEST(NormBound, RandomReparameterizationsNeverUndercut) {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix p = rng.normal_matrix(5, 5);
        const NormBoundReport rep = norm_lower_bound_check(p, 1000, 100 + static_cast<std::uint64_t>(trial));
        EXPECT_EQ(rep.violations, 0u);
        EXPECT_NEAR(rep.optimum, rep.bound, 1e-10 * rep.bound);
        EXPECT_GE(rep.min_sampled, rep.bound - 1e-8);
    }
    EXPECT_THROW(norm_lower_bound_check(Matrix::Ones(2, 2), 0, 1), PreconditionError);
}
