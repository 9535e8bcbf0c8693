#include <gtest/gtest.h>

#include "align_lab/linalg.hpp"
#include "align_lab/rng.hpp"

using namespace align_lab;

namespace {

double recon_error(const Matrix& a, const UsSvd& s) { return (a - s.reconstruct()).norm(); }

} // namespace

TEST(Svd, IdentityIsItsOwnDecomposition) {
    const UsSvd s = svd(Matrix::Identity(3, 3));
    EXPECT_TRUE(s.u.isApprox(Matrix::Identity(3, 3), 1e-14));
    EXPECT_TRUE(s.v.isApprox(Matrix::Identity(3, 3), 1e-14));
    EXPECT_TRUE(s.sigma.isApprox(Vector::Ones(3), 1e-14));
}

TEST(Svd, SignedDiagonalSortsAndReconstructs) {
    Matrix a(2, 2);
    a << 2, 0, 0, -3;
    const UsSvd s = svd(a);
    EXPECT_NEAR(s.sigma(0), 3.0, 1e-14);
    EXPECT_NEAR(s.sigma(1), 2.0, 1e-14);
    EXPECT_LE(recon_error(a, s), 1e-12);
    // largest-magnitude entry of each U column is positive
    for (Eigen::Index j = 0; j < 2; ++j) EXPECT_GT(s.u.col(j).maxCoeff(), 0.0);
}

TEST(Svd, RandomRectangularReconstructs) {
    Rng rng(7);
    for (auto [m, n] : {std::pair{5, 3}, {3, 5}, {1, 4}, {9, 9}}) {
        const Matrix a = rng.normal_matrix(m, n);
        const UsSvd s = svd(a);
        EXPECT_LE(recon_error(a, s), 1e-10 * std::max(1.0, a.norm()));
        EXPECT_LE(orthonormality_defect(s.u), 1e-10);
        EXPECT_LE(orthonormality_defect(s.v), 1e-10);
        EXPECT_EQ(s.sigma.size(), std::min(m, n));
        for (Eigen::Index i = 1; i < s.sigma.size(); ++i) EXPECT_GE(s.sigma(i - 1), s.sigma(i));
        EXPECT_GE(s.sigma.minCoeff(), 0.0);
    }
}

TEST(Svd, ReconstructionHoldsUpTo128) {
    Rng rng(11);
    for (int n : {16, 64, 128}) {
        const Matrix a = rng.normal_matrix(n, n - 3) * 10.0;
        EXPECT_LE(recon_error(a, svd(a)), 1e-10 * std::max(1.0, a.norm()));
    }
}

TEST(Svd, SignConventionIsDeterministic) {
    Rng rng(3);
    const Matrix a = rng.normal_matrix(6, 4);
    const UsSvd s1 = svd(a);
    const UsSvd s2 = svd(-(-a));
    EXPECT_EQ(s1.u, s2.u);
    for (Eigen::Index j = 0; j < s1.u.cols(); ++j) {
        Eigen::Index idx;
        s1.u.col(j).cwiseAbs().maxCoeff(&idx);
        EXPECT_GT(s1.u(idx, j), 0.0);
    }
}

TEST(Svd, RejectsNonFinite) {
    Matrix a = Matrix::Ones(2, 2);
    a(0, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(svd(a), NonFiniteError);
}

TEST(AlignmentScore, IdenticalSubspacesScoreOne) {
    Rng rng(1);
    const Matrix u = rng.orthonormal(3);
    const Vector s = (Vector(3) << 3, 2, 1).finished();
    const AlignmentScore a = alignment_score(u, u, s, s);
    EXPECT_NEAR(a.value, 1.0, 1e-14);
    EXPECT_EQ(a.matched_rank, 3u);
}

TEST(AlignmentScore, SignFlipsDoNotRegister) {
    Rng rng(2);
    const Matrix u = rng.orthonormal(3);
    const Vector s = (Vector(3) << 3, 2, 1).finished();
    const Matrix flipped = u * Vector(Vector::Ones(3) - 2.0 * Vector::Unit(3, 0)).asDiagonal();
    EXPECT_NEAR(alignment_score(u, flipped, s, s).value, 1.0, 1e-14);
}

TEST(AlignmentScore, DistinctSigmasMatchBruteForceDots) {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix u = rng.orthonormal(9);
        const Matrix v = rng.orthonormal(9);
        Vector s(9);
        for (int i = 0; i < 9; ++i) s(i) = 9.0 - i;
        double brute = 0.0;
        for (int i = 0; i < 9; ++i) brute += std::abs(u.col(i).dot(v.col(i)));
        brute /= 9.0;
        EXPECT_NEAR(alignment_score(u, v, s, s).value, brute, 1e-13);
    }
}

TEST(AlignmentScore, RotationInsideDegenerateGroupDoesNotRegister) {
    Rng rng(9);
    const Matrix u = rng.orthonormal(5);
    const Vector s = (Vector(5) << 4, 2, 2, 2, 1).finished();
    Matrix rot = Matrix::Identity(5, 5);
    rot.block(1, 1, 3, 3) = rng.orthonormal(3);
    const Matrix rotated = u * rot;
    EXPECT_NEAR(alignment_score(u, rotated, s, s).value, 1.0, 1e-12);
    // the same rotation reads as misalignment if the values are distinct
    const Vector distinct = (Vector(5) << 5, 4, 3, 2, 1).finished();
    EXPECT_LT(alignment_score(u, rotated, distinct, distinct).value, 1.0 - 1e-3);
}

TEST(AlignmentScore, SymmetricInArguments) {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix u = rng.orthonormal(6);
        const Matrix v = rng.orthonormal(6);
        const Vector s1 = (Vector(6) << 6, 5, 5, 3, 2, 1).finished();
        const Vector s2 = (Vector(6) << 7, 6, 4, 4, 4, 0.5).finished();
        EXPECT_NEAR(alignment_score(u, v, s1, s2).value, alignment_score(v, u, s2, s1).value, 1e-13);
    }
}

TEST(AlignmentScore, RankCutoffLimitsComparedDirections) {
    Rng rng(4);
    const Matrix u = rng.orthonormal(4);
    const Vector s = (Vector(4) << 1, 0.5, 1e-12, 0).finished();
    EXPECT_EQ(alignment_score(u, u, s, s).matched_rank, 2u);
    ScoreOptions opts;
    opts.max_directions = 1;
    EXPECT_EQ(alignment_score(u, u, s, s, opts).matched_rank, 1u);
}

TEST(AlignmentScore, EmptyRankThrows) {
    const Matrix u = Matrix::Identity(2, 2);
    EXPECT_THROW(alignment_score(u, u, Vector::Zero(2), Vector::Zero(2)), EmptyRankError);
}

TEST(AdjacentScores, SymmetricPairIsAligned) {
    Rng rng(21);
    const Matrix w1 = rng.normal_matrix(4, 6);
    const std::vector<Matrix> layers{w1, w1.transpose()};
    const auto sc = layer_adjacent_scores(layers);
    ASSERT_EQ(sc.size(), 1u);
    EXPECT_NEAR(sc[0].value, 1.0, 1e-10);
}

TEST(AdjacentScores, RandomLayersMatchDirectComputation) {
    Rng rng(22);
    const std::vector<Matrix> layers{rng.normal_matrix(9, 9), rng.normal_matrix(9, 9)};
    const auto sc = layer_adjacent_scores(layers);
    const UsSvd a = svd(layers[0]);
    const UsSvd b = svd(layers[1]);
    double direct = 0.0;
    for (int i = 0; i < 9; ++i) direct += std::abs(a.u.col(i).dot(b.v.col(i)));
    EXPECT_NEAR(sc[0].value, direct / 9.0, 1e-12);
    EXPECT_LT(sc[0].value, 1.0);
}

TEST(AdjacentScores, ZeroLayerIsVacuouslyAligned) {
    const std::vector<Matrix> layers{Matrix::Zero(3, 2), Matrix::Ones(1, 3)};
    const auto sc = layer_adjacent_scores(layers);
    EXPECT_EQ(sc[0].value, 1.0);
    EXPECT_EQ(sc[0].matched_rank, 0u);
}

TEST(InvarianceScores, UnchangedNetworkScoresOne) {
    Rng rng(31);
    const std::vector<Matrix> layers{rng.normal_matrix(3, 4), rng.normal_matrix(2, 3)};
    for (const auto& s : invariance_scores(layers, layers)) {
        EXPECT_NEAR(s.u.value, 1.0, 1e-14);
        EXPECT_NEAR(s.v.value, 1.0, 1e-14);
    }
}

TEST(IsDiagonal, Examples) {
    EXPECT_TRUE(is_diagonal(Vector(Vector::LinSpaced(3, 1, 3)).asDiagonal().toDenseMatrix(), 1e-10));
    Matrix m(2, 2);
    m << 1, 1e-12, 0, 2;
    EXPECT_TRUE(is_diagonal(m, 1e-10));
    m(0, 1) = 0.1;
    EXPECT_FALSE(is_diagonal(m, 1e-10));
}

TEST(IsDiagonal, ThresholdIsRelativeToMaxEntry) {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix d = Matrix::Zero(4, 4);
        d.diagonal() = rng.normal_vector(4) * 100.0;
        EXPECT_TRUE(is_diagonal(d, 1e-10));
        const double bound = 1e-10 * std::max(1.0, d.cwiseAbs().maxCoeff());
        d(1, 2) = 2.0 * bound;
        EXPECT_FALSE(is_diagonal(d, 1e-10));
    }
}

TEST(PsdPinv, InvertsFullRankAndReportsRank) {
    Rng rng(51);
    const Matrix x = rng.normal_matrix(4, 10);
    Eigen::Index rank = 0;
    const Matrix inv = psd_pinv(x * x.transpose(), 1e-10, &rank);
    EXPECT_EQ(rank, 4);
    EXPECT_TRUE((inv * x * x.transpose()).isApprox(Matrix::Identity(4, 4), 1e-10));
    const Matrix thin = rng.normal_matrix(4, 2);
    psd_pinv(thin * thin.transpose(), 1e-10, &rank);
    EXPECT_EQ(rank, 2);
}

TEST(CompleteOrthonormal, ExtendsPartialBasis) {
    Rng rng(61);
    const Matrix q = rng.orthonormal(5).leftCols(2);
    const Matrix full = complete_orthonormal(q, 5);
    EXPECT_LE(orthonormality_defect(full), 1e-12);
    EXPECT_EQ(full.leftCols(2), q);
}
