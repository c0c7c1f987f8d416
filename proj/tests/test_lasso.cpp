#include <gtest/gtest.h>

#include <Eigen/QR>

#include "hetcate/lasso.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace hetcate;

namespace {

// Random 5x5 design scaled so that X'X / 5 = I.
Matrix orthonormal_design(std::uint64_t seed) {
    const Matrix g = fixtures::gaussian_design(5, 4, seed).rightCols(5);
    Eigen::HouseholderQR<Matrix> qr(g);
    const Matrix q = qr.householderQ() * Matrix::Identity(5, 5);
    return q * std::sqrt(5.0);
}

double l1(const Vector& b, bool skip_intercept = true) {
    double s = 0.0;
    for (Eigen::Index j = skip_intercept ? 1 : 0; j < b.size(); ++j) s += std::abs(b(j));
    return s;
}

}  // namespace

TEST(Lasso, SoftThreshold) {
    EXPECT_EQ(soft_threshold(3.0, 1.0), 2.0);
    EXPECT_EQ(soft_threshold(-3.0, 1.0), -2.0);
    EXPECT_EQ(soft_threshold(0.5, 1.0), 0.0);
    EXPECT_EQ(soft_threshold(-1.0, 1.0), 0.0);
}

TEST(Lasso, ZeroTargetGivesZeroCoefficients) {
    const Matrix x = fixtures::gaussian_design(40, 6, 1);
    const Vector y = Vector::Zero(40);
    const auto fit = fit_lasso(x, y, fixtures::iota(40), 0.1);
    EXPECT_TRUE(fit.converged);
    EXPECT_EQ(fit.coefficients.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Lasso, OrthonormalDesignMatchesSoftThresholdClosedForm) {
    // Public lambda multiplies an un-halved mean square; the closed form is
    // soft_threshold(mean(x_j y), lambda / 2).
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Matrix x = orthonormal_design(seed);
        Rng rng(seed * 31);
        Vector y(5);
        for (int i = 0; i < 5; ++i) y(i) = 2.0 * rng.normal();
        const Vector xty = x.transpose() * y / 5.0;
        for (double lambda : {0.0, 0.1, 0.5, 1.3, 4.0}) {
            const auto fit = fit_lasso(x, y, fixtures::iota(5), lambda, true);
            ASSERT_TRUE(fit.converged);
            for (int j = 0; j < 5; ++j) {
                EXPECT_NEAR(fit.coefficients(j), soft_threshold(xty(j), lambda / 2.0), 1e-8)
                    << "seed " << seed << " lambda " << lambda << " j " << j;
            }
        }
    }
}

TEST(Lasso, NullSolutionAboveThreshold) {
    Matrix x = fixtures::gaussian_design(60, 8, 2).rightCols(8);
    for (Eigen::Index j = 0; j < x.cols(); ++j) x.col(j).array() -= x.col(j).mean();
    Rng rng(3);
    Vector y(60);
    for (int i = 0; i < 60; ++i) y(i) = rng.normal() + x(i, 0);
    const double threshold = (2.0 * x.transpose() * y / 60.0).cwiseAbs().maxCoeff();
    const auto fit = fit_lasso(x, y, fixtures::iota(60), threshold * 1.0001, true);
    EXPECT_EQ(fit.coefficients.cwiseAbs().maxCoeff(), 0.0);
    const auto below = fit_lasso(x, y, fixtures::iota(60), threshold * 0.9, true);
    EXPECT_GT(below.coefficients.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Lasso, KktCertificationOnRandomProblems) {
    Rng rng(77);
    for (int problem = 0; problem < 100; ++problem) {
        const Index rows = 20 + rng.below(120);
        const Index d = 2 + rng.below(40);
        const Matrix x = fixtures::gaussian_design(rows, d, 1000 + problem);
        Vector y(static_cast<Eigen::Index>(rows));
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = x(i, 1) - 0.5 * x(i, d) + rng.normal();
        const double lambda = 0.02 + rng.uniform();
        const auto fit = fit_lasso(x, y, fixtures::iota(rows), lambda);
        ASSERT_TRUE(fit.converged) << "problem " << problem;
        EXPECT_LE(oracle::lasso_kkt(x, y, fit.coefficients, lambda / 2.0), 1e-6) << "problem " << problem;
        EXPECT_LE(fit.kkt_residual, 1e-6);
    }
}

TEST(Lasso, SubsetOnlyUsesListedRows) {
    const Matrix x = fixtures::gaussian_design(50, 4, 9);
    Vector y = x.col(1) * 2.0;
    const std::vector<Index> subset{1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23};
    const auto base = fit_lasso(x, y, subset, 0.05);
    for (Index i = 0; i < 50; i += 2) y(static_cast<Eigen::Index>(i)) = 1e6;
    const auto poisoned = fit_lasso(x, y, subset, 0.05);
    EXPECT_EQ(base.coefficients, poisoned.coefficients);
}

TEST(Lasso, ObjectiveNeverIncreasesAcrossSweeps) {
    const Matrix x = fixtures::gaussian_design(80, 30, 4);
    Rng rng(5);
    Vector y(80);
    for (int i = 0; i < 80; ++i) y(i) = x(i, 2) + x(i, 3) + rng.normal();
    SolverOptions opt;
    opt.track_objective = true;
    const auto fit = fit_lasso(x, y, fixtures::iota(80), 0.05, false, opt);
    ASSERT_GE(fit.objective_trace.size(), 2u);
    for (std::size_t s = 1; s < fit.objective_trace.size(); ++s) {
        EXPECT_LE(fit.objective_trace[s], fit.objective_trace[s - 1] + 1e-14 * std::abs(fit.objective_trace[s - 1]));
    }
}

TEST(Lasso, RowPermutationInvariance) {
    const Index rows = 90;
    const Matrix x = fixtures::gaussian_design(rows, 12, 6);
    Rng rng(7);
    Vector y(static_cast<Eigen::Index>(rows));
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = x(i, 1) - x(i, 4) + 0.3 * rng.normal();
    std::vector<Index> perm = fixtures::iota(rows);
    rng.shuffle(std::span<Index>(perm));
    Matrix xp(x.rows(), x.cols());
    Vector yp(y.size());
    for (Index i = 0; i < rows; ++i) {
        xp.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(perm[i]));
        yp(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(perm[i]));
    }
    const auto a = fit_lasso(x, y, fixtures::iota(rows), 0.08);
    const auto b = fit_lasso(xp, yp, fixtures::iota(rows), 0.08);
    EXPECT_LE((a.coefficients - b.coefficients).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Lasso, PenaltyNormDecreasesWithLambda) {
    const Matrix x = fixtures::gaussian_design(70, 25, 8);
    Rng rng(8);
    Vector y(70);
    for (int i = 0; i < 70; ++i) y(i) = x(i, 1) + 0.5 * x(i, 2) - x(i, 3) + rng.normal();
    double previous = -1.0;
    for (double lambda : {2.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.01}) {
        const double norm = l1(fit_lasso(x, y, fixtures::iota(70), lambda).coefficients);
        if (previous >= 0.0) {
            EXPECT_LE(previous, norm + 1e-8);
        }
        previous = norm;
    }
}

TEST(Lasso, InterceptIsNotPenalizedByDefault) {
    const Matrix x = fixtures::gaussian_design(100, 3, 10);
    Vector y = Vector::Constant(100, 5.0);
    const auto fit = fit_lasso(x, y, fixtures::iota(100), 10.0);
    EXPECT_NEAR(fit.coefficients(0), 5.0, 1e-10);
    const auto pen = fit_lasso(x, y, fixtures::iota(100), 10.0, true);
    EXPECT_NEAR(pen.coefficients(0), 0.0, 1e-12);
}

TEST(Lasso, PathEndsAtTheLastLambda) {
    const Matrix x = fixtures::gaussian_design(60, 10, 12);
    Rng rng(12);
    Vector y(60);
    for (int i = 0; i < 60; ++i) y(i) = x(i, 1) + rng.normal();
    const std::vector<double> path{1.0, 0.5, 0.1};
    const auto along = fit_lasso_along(x, y, fixtures::iota(60), path);
    const auto direct = fit_lasso(x, y, fixtures::iota(60), 0.1);
    EXPECT_EQ(along.lambda, 0.1);
    EXPECT_LE((along.coefficients - direct.coefficients).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Lasso, RejectsBadInput) {
    const Matrix x = fixtures::gaussian_design(10, 2, 1);
    const Vector y = Vector::Zero(10);
    EXPECT_THROW(fit_lasso(x, y, std::vector<Index>{}, 0.1), std::invalid_argument);
    EXPECT_THROW(fit_lasso(x, y, std::vector<Index>{0, 10}, 0.1), std::out_of_range);
    EXPECT_THROW(fit_lasso(x, y, fixtures::iota(10), -1.0), std::invalid_argument);
}
