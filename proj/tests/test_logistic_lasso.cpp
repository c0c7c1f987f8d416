#include <gtest/gtest.h>

#include "hetcate/logistic_lasso.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace hetcate;

namespace {

struct BinaryProblem {
    Matrix x;
    Vector a;
};

BinaryProblem draw_binary(Index rows, Index d, double signal, std::uint64_t seed) {
    BinaryProblem p{fixtures::gaussian_design(rows, d, seed), Vector(static_cast<Eigen::Index>(rows))};
    Rng rng(seed + 1);
    for (Eigen::Index i = 0; i < p.a.size(); ++i) {
        const double prob = logistic(0.3 + signal * p.x(i, 1));
        p.a(i) = rng.uniform() < prob ? 1.0 : 0.0;
    }
    return p;
}

}  // namespace

TEST(LogisticLasso, TwoParameterProblemsMatchGridMinimum) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto p = draw_binary(60, 1, 1.0, seed * 13);
        for (double lambda : {0.0, 0.02, 0.1}) {
            const auto fit = fit_logistic_lasso(p.x, p.a, fixtures::iota(60), lambda);
            ASSERT_TRUE(fit.converged);
            const double solver = oracle::logistic_objective(p.x, p.a, fit.coefficients, lambda);
            const double grid = oracle::grid_minimum_2d([&](double g0, double g1) {
                Vector g(2);
                g << g0, g1;
                return oracle::logistic_objective(p.x, p.a, g, lambda);
            });
            EXPECT_LE(solver, grid + 1e-9) << "seed " << seed << " lambda " << lambda;
            EXPECT_LE(std::abs(solver - grid), 1e-5) << "seed " << seed << " lambda " << lambda;
        }
    }
}

TEST(LogisticLasso, KktOnRandomProblems) {
    Rng rng(91);
    for (int problem = 0; problem < 30; ++problem) {
        const Index rows = 80 + rng.below(200);
        const Index d = 2 + rng.below(30);
        const auto p = draw_binary(rows, d, 0.8, 500 + problem);
        const double lambda = 0.005 + 0.1 * rng.uniform();
        const auto fit = fit_logistic_lasso(p.x, p.a, fixtures::iota(rows), lambda);
        ASSERT_TRUE(fit.converged) << "problem " << problem;
        EXPECT_LE(oracle::logistic_kkt(p.x, p.a, fit.coefficients, lambda), 1e-6) << "problem " << problem;
    }
}

TEST(LogisticLasso, LargePenaltyLeavesInterceptAtLogOdds) {
    const auto p = draw_binary(300, 10, 0.5, 4);
    const auto fit = fit_logistic_lasso(p.x, p.a, fixtures::iota(300), 10.0);
    const double rate = p.a.mean();
    EXPECT_NEAR(fit.coefficients(0), std::log(rate / (1.0 - rate)), 1e-8);
    EXPECT_EQ(fit.coefficients.tail(10).cwiseAbs().maxCoeff(), 0.0);
}

TEST(LogisticLasso, SingleClassIsAFitError) {
    const Matrix x = fixtures::gaussian_design(20, 2, 3);
    const Vector a = Vector::Ones(20);
    try {
        fit_logistic_lasso(x, a, fixtures::iota(20), 0.1);
        FAIL() << "expected FitError";
    } catch (const FitError& e) {
        EXPECT_STREQ(e.what(), "propensity fit requires both arms");
    }
}

TEST(LogisticLasso, NonBinaryTargetsRejected) {
    const Matrix x = fixtures::gaussian_design(20, 2, 3);
    Vector a = Vector::Zero(20);
    a(0) = 1.0;
    a(1) = 0.5;
    EXPECT_THROW(fit_logistic_lasso(x, a, fixtures::iota(20), 0.1), std::invalid_argument);
}

TEST(LogisticLasso, PerfectSeparationReportsNonConvergence) {
    const Index rows = 40;
    Matrix x = fixtures::gaussian_design(rows, 1, 5);
    Vector a(static_cast<Eigen::Index>(rows));
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = x(i, 1) > 0.0 ? 1.0 : 0.0;
    const auto fit = fit_logistic_lasso(x, a, fixtures::iota(rows), 0.0);
    EXPECT_FALSE(fit.converged);
    EXPECT_TRUE(fit.coefficients.allFinite());
}

TEST(LogisticLasso, ObjectiveTraceDecreases) {
    const auto p = draw_binary(200, 15, 1.0, 8);
    SolverOptions opt;
    opt.track_objective = true;
    const auto fit = fit_logistic_lasso(p.x, p.a, fixtures::iota(200), 0.01, opt);
    ASSERT_GE(fit.objective_trace.size(), 2u);
    for (std::size_t s = 1; s < fit.objective_trace.size(); ++s) {
        EXPECT_LE(fit.objective_trace[s], fit.objective_trace[s - 1] + 1e-12);
    }
}
