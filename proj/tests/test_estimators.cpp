#include <gtest/gtest.h>

#include "hetcate/estimators.hpp"
#include "hetcate/simulation.hpp"
#include "support/fixtures.hpp"
#include "support/supervised_reference.hpp"

using namespace hetcate;

namespace {

SemiSupervisedDataset model3(Index n, Index m, std::uint64_t seed) {
    DgpSpec spec;
    spec.model_id = 3;
    spec.n = n;
    spec.m = m;
    spec.seed = seed;
    return draw_dataset(spec);
}

EstimatorConfig quick_config(std::uint64_t seed) {
    EstimatorConfig cfg;
    cfg.seed = seed;
    cfg.mu_spec = NuisanceLearnerSpec(LearnerKind::LassoLinear, {{"grid_size", 6}});
    cfg.pi_spec = NuisanceLearnerSpec(LearnerKind::LogisticLasso, {{"grid_size", 6}});
    return cfg;
}

// n Var of the weighted plug-in as a function of omega_L, with omega_U tied by
// the constraint; minimised by golden-section search.
double weighted_variance(double A, double B, double C, double n, double m, double wl) {
    const double wu = (1.0 - n * wl) / m;
    return A + n * n * wl * wl * B + 2.0 * n * wl * C + n * m * wu * wu * B;
}

std::pair<double, double> golden_min(double A, double B, double C, double n, double m) {
    double lo = -1000.0 / n;
    double hi = 1000.0 / n;
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 200; ++it) {
        const double c = hi - r * (hi - lo);
        const double d = lo + r * (hi - lo);
        if (weighted_variance(A, B, C, n, m, c) < weighted_variance(A, B, C, n, m, d)) {
            hi = d;
        } else {
            lo = c;
        }
    }
    const double wl = 0.5 * (lo + hi);
    return {wl, weighted_variance(A, B, C, n, m, wl)};
}

}  // namespace

TEST(Moments, MatchElementwiseLoops) {
    Rng rng(1);
    Vector resid(7), pl(7), pu(11);
    for (int i = 0; i < 7; ++i) {
        resid(i) = rng.normal();
        pl(i) = rng.normal();
    }
    for (int i = 0; i < 11; ++i) pu(i) = rng.normal();
    const auto t = compute_moments(2, resid, pl, pu);
    double q = 0.0, q4 = 0.0;
    for (int i = 0; i < 7; ++i) {
        q += pl(i) * pl(i);
        q4 += std::pow(pl(i), 4);
    }
    for (int i = 0; i < 11; ++i) {
        q += pu(i) * pu(i);
        q4 += std::pow(pu(i), 4);
    }
    q /= 18.0;
    q4 /= 18.0;
    double A = 0.0, C = 0.0;
    for (int i = 0; i < 7; ++i) {
        A += std::pow(2.0 * resid(i) * pl(i), 2);
        C += 2.0 * resid(i) * pl(i) * (pl(i) * pl(i) - q);
    }
    EXPECT_EQ(t.fold, 2u);
    EXPECT_NEAR(t.q_hat, q, 1e-13);
    EXPECT_NEAR(t.a_hat, A / 7.0, 1e-13);
    EXPECT_NEAR(t.b_hat, q4 - q * q, 1e-13);
    EXPECT_NEAR(t.c_hat, C / 7.0, 1e-13);
}

TEST(Weights, HandEvaluatedExample) {
    const auto w = optimal_weights(2.0, 1.0, 100, 400);
    EXPECT_NEAR(w.omega_l(), -0.002, 1e-15);
    EXPECT_NEAR(w.omega_u(), 0.003, 1e-15);
    EXPECT_FALSE(w.degenerate());
    EXPECT_NEAR(ow_variance(1.0, 2.0, 1.0, 100, 400, 500), 1.4, 1e-12);
}

TEST(Weights, SpecialCases) {
    const auto eq = optimal_weights(3.0, 0.0, 100, 400);
    EXPECT_NEAR(eq.omega_l(), 1.0 / 500.0, 1e-16);
    EXPECT_NEAR(eq.omega_u(), 1.0 / 500.0, 1e-16);
    const auto lab_only = optimal_weights(3.0, -3.0, 100, 400);
    EXPECT_NEAR(lab_only.omega_u(), 0.0, 1e-16);
    EXPECT_NEAR(lab_only.omega_l(), 1.0 / 100.0, 1e-16);
    const auto sup = optimal_weights(3.0, 1.0, 100, 0);
    EXPECT_NEAR(sup.omega_l(), 1.0 / 100.0, 1e-16);
    EXPECT_EQ(sup.omega_u(), 0.0);
    const auto degenerate = optimal_weights(0.0, 1.0, 100, 400);
    EXPECT_TRUE(degenerate.degenerate());
    EXPECT_EQ(degenerate.omega_l(), 1.0 / 500.0);
}

TEST(Weights, SupervisedVarianceWithoutUnlabeledRows) {
    EXPECT_NEAR(ow_variance(1.0, 2.0, 0.5, 100, 0, 100), 1.0 + 2.0 + 1.0, 1e-14);
    EXPECT_NEAR(direct_variance(1.0, 2.0, 0.5, 100, 100), 4.0, 1e-14);
    EXPECT_THROW(ow_variance(1.0, 2.0, 0.5, 100, 10, 100), std::invalid_argument);
}

TEST(Weights, OptimalWeightsMinimiseVarianceOracle) {
    Rng rng(2);
    for (int trial = 0; trial < 500; ++trial) {
        const double n = 50.0 + static_cast<double>(rng.below(2000));
        const double m = 1.0 + static_cast<double>(rng.below(5000));
        const double A = 5.0 * rng.uniform();
        const double B = 0.05 + 3.0 * rng.uniform();
        // Cauchy-Schwarz: |C| <= sqrt(A B) for moments of a real distribution.
        const double C = (2.0 * rng.uniform() - 1.0) * std::sqrt(A * B);
        const auto w = optimal_weights(B, C, static_cast<Index>(n), static_cast<Index>(m));
        const auto [wl, var] = golden_min(A, B, C, n, m);
        EXPECT_NEAR(w.omega_l() * n, wl * n, 1e-6);
        EXPECT_NEAR(ow_variance(A, B, C, static_cast<Index>(n), static_cast<Index>(m), static_cast<Index>(n + m)), var,
                    1e-8 * std::max(1.0, var));
    }
}

TEST(Weights, SafetyOrdering) {
    Rng rng(3);
    for (int trial = 0; trial < 20000; ++trial) {
        const Index n = 1 + rng.below(5000);
        const Index m = rng.below(20000);
        const double A = 10.0 * rng.uniform();
        const double B = 1e-6 + 10.0 * rng.uniform();
        const double C = 20.0 * (rng.uniform() - 0.5);
        const auto w = optimal_weights(B, C, n, m);
        ASSERT_NEAR(static_cast<double>(n) * w.omega_l() + static_cast<double>(m) * w.omega_u(), 1.0, 1e-12);
        const double ow = ow_variance(A, B, C, n, m, n + m);
        const double direct = direct_variance(A, B, C, n, n + m);
        const double supervised = A + B + 2.0 * C;
        const double tol = 1e-12 * (A + B + std::abs(C) + std::abs(supervised));
        ASSERT_LE(ow, direct + tol);
        ASSERT_LE(ow, supervised + tol);
    }
}

class EstimatorRun : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        ds_ = new SemiSupervisedDataset(model3(300, 600, 4));
        auto [comp, cf] = crossfit_components(Estimand::EthOw, *ds_, quick_config(5));
        comp_ = new TthComponents(std::move(comp));
    }
    static void TearDownTestSuite() {
        delete ds_;
        delete comp_;
    }
    static SemiSupervisedDataset* ds_;
    static TthComponents* comp_;
};

SemiSupervisedDataset* EstimatorRun::ds_ = nullptr;
TthComponents* EstimatorRun::comp_ = nullptr;

TEST_F(EstimatorRun, ProjectionsAreCenteredPerFold) {
    for (const auto& f : comp_->folds) {
        const double s = f.proj_labeled.sum() + f.proj_unlabeled.sum();
        EXPECT_LE(std::abs(s) / static_cast<double>(f.proj_labeled.size() + f.proj_unlabeled.size()), 1e-10);
    }
}

TEST_F(EstimatorRun, EqualWeightsReproduceDirectPoint) {
    std::vector<WeightPair> eq(comp_->folds.size(), WeightPair::equal(comp_->n, comp_->m));
    EXPECT_NEAR(weighted_point(*comp_, eq), direct_point(*comp_), 1e-12);
}

TEST_F(EstimatorRun, DirectPointMatchesFormula) {
    const double N = static_cast<double>(comp_->n + comp_->m);
    const double n = static_cast<double>(comp_->n);
    double plug = 0.0, debias = 0.0;
    for (const auto& f : comp_->folds) {
        for (Eigen::Index i = 0; i < f.proj_labeled.size(); ++i) {
            plug += f.proj_labeled(i) * f.proj_labeled(i);
            debias += f.proj_labeled(i) * f.residual(i);
        }
        for (Eigen::Index i = 0; i < f.proj_unlabeled.size(); ++i) plug += f.proj_unlabeled(i) * f.proj_unlabeled(i);
    }
    EXPECT_NEAR(direct_point(*comp_), plug / N + 2.0 * debias / n, 1e-12);
}

TEST_F(EstimatorRun, ReportFieldsAreConsistent) {
    const auto r = estimate(Estimand::EthOw, *ds_, quick_config(5));
    EXPECT_EQ(r.estimand, Estimand::EthOw);
    EXPECT_EQ(r.n, 300u);
    EXPECT_EQ(r.m, 600u);
    EXPECT_EQ(r.k_folds, 3u);
    ASSERT_EQ(r.diagnostics.size(), 3u);
    EXPECT_NEAR(r.ate_hat, comp_->ate_hat, 0.0);
    EXPECT_LT(r.ci_lower, r.point);
    EXPECT_GT(r.ci_upper, r.point);
    EXPECT_GT(r.std_error, 0.0);
    std::vector<WeightPair> w;
    for (const auto& d : r.diagnostics) {
        EXPECT_NEAR(300.0 * d.omega_l + 600.0 * d.omega_u, 1.0, 1e-12);
        w.emplace_back(d.omega_l, d.omega_u, 300, 600);
    }
    EXPECT_NEAR(r.point, weighted_point(*comp_, w), 1e-12);
    EXPECT_NEAR(r.point, 1.0, 0.5);
}

TEST(Estimators, TthVarianceVanishesForZeroProjection) {
    TthComponents c;
    c.n = 6;
    c.m = 3;
    for (int k = 0; k < 3; ++k) {
        FoldComponents f;
        f.proj_labeled = Vector::Zero(2);
        f.proj_unlabeled = Vector::Zero(1);
        f.residual = Vector::Constant(2, 1.5);
        c.folds.push_back(f);
    }
    EXPECT_EQ(tth_variance(c, 6, 3, 9), 0.0);
    EXPECT_EQ(direct_point(c), 0.0);
}

TEST(Estimators, ZeroSlopeGivesZeroEstimate) {
    const auto ds = model3(150, 150, 6);
    auto cfg = quick_config(7);
    cfg.cate_spec = NuisanceLearnerSpec(LearnerKind::LassoLinear, {{"lambda", 1e6}});
    for (Estimand e : {Estimand::EthDirect, Estimand::EthOw}) {
        const auto r = estimate(e, ds, cfg);
        EXPECT_LE(std::abs(r.point), 1e-15);
        EXPECT_LE(r.std_error, 1e-12);
    }
}

TEST(Estimators, SpowWithParametricSpecsEqualsOw) {
    const auto ds = model3(200, 300, 8);
    const auto cfg = quick_config(9);
    const auto ow = estimate(Estimand::EthOw, ds, cfg);
    auto spow = estimate(Estimand::EthSpow, ds, cfg);
    EXPECT_EQ(spow.point, ow.point);
    EXPECT_EQ(spow.std_error, ow.std_error);
    EXPECT_EQ(spow.diagnostics, ow.diagnostics);
}

TEST(Estimators, OutcomeScaleEquivariance) {
    // Fixed penalties scaled with the outcome make every lasso fit scale too.
    const auto ds = model3(240, 240, 10);
    auto scaled = ds;
    scaled.labeled_y *= 2.0;
    auto cfg = quick_config(11);
    cfg.pi_spec = NuisanceLearnerSpec(LearnerKind::LogisticLasso, {{"lambda", 0.02}});
    auto cfg2 = cfg;
    cfg.mu_spec = NuisanceLearnerSpec(LearnerKind::LassoLinear, {{"lambda", 0.05}});
    cfg.cate_spec = NuisanceLearnerSpec(LearnerKind::LassoLinear, {{"lambda", 0.05}});
    cfg2.mu_spec = NuisanceLearnerSpec(LearnerKind::LassoLinear, {{"lambda", 0.1}});
    cfg2.cate_spec = NuisanceLearnerSpec(LearnerKind::LassoLinear, {{"lambda", 0.1}});
    for (Estimand e : {Estimand::EthDirect, Estimand::EthOw}) {
        const auto a = estimate(e, ds, cfg);
        const auto b = estimate(e, scaled, cfg2);
        EXPECT_NEAR(b.point, 4.0 * a.point, 1e-6 * std::abs(a.point));
        EXPECT_NEAR(b.std_error, 4.0 * a.std_error, 1e-6 * a.std_error);
    }
}

TEST(Estimators, SupervisedSpecialisationMatchesReferencePath) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto ds = model3(120, 0, 100 + seed);
        auto cfg = quick_config(200 + seed);
        cfg.mu_spec.reset();
        cfg.pi_spec.reset();
        for (Estimand e : {Estimand::Tth, Estimand::EthDirect, Estimand::EthOw, Estimand::EthSpow}) {
            const auto lib = estimate(e, ds, cfg);
            const auto ref = reference::supervised(e, ds, cfg);
            EXPECT_NEAR(lib.point, ref.point, 1e-10) << to_string(e) << " seed " << seed;
            EXPECT_NEAR(lib.std_error, ref.std_error, 1e-10) << to_string(e) << " seed " << seed;
        }
    }
}

TEST(Estimators, SameSeedIsBitReproducible) {
    const auto ds = model3(150, 150, 12);
    const auto a = estimate(Estimand::Tth, ds, quick_config(13));
    const auto b = estimate(Estimand::Tth, ds, quick_config(13));
    EXPECT_EQ(a, b);
}

TEST(Estimators, RejectsInvalidInput) {
    auto ds = model3(60, 30, 14);
    ds.unlabeled_a.reset();
    EXPECT_THROW(estimate(Estimand::EthOw, ds, quick_config(1)), ValidationError);
    auto cfg = quick_config(1);
    cfg.mode = UnlabeledMode::CovariatesOnly;
    EXPECT_NO_THROW(estimate(Estimand::EthDirect, ds, cfg));
    auto bad = model3(60, 0, 15);
    bad.labeled_y(3) = std::nan("");
    EXPECT_THROW(estimate(Estimand::Tth, bad, quick_config(1)), ValidationError);
}
