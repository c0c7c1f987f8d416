#pragma once

// Nested leave-two-out cross-fitting.
//
// For every ordered fold pair (k, k'), k != k', outcome models are fitted on
// labeled rows outside folds k and k' (one model per arm) and the propensity
// model on the labeled plus unlabeled rows outside those folds. The resulting
// doubly robust pseudo-outcomes are evaluated on the held-out labeled folds,
// averaged over k' for fold k, and regressed on X (or W) to obtain the
// fold-k CATE model, which never sees rows of fold k.

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hetcate/core_model.hpp"
#include "hetcate/learners.hpp"

namespace hetcate {

enum class UnlabeledMode { FullUnlabeled, CovariatesOnly };

inline std::string_view to_string(UnlabeledMode m) {
    return m == UnlabeledMode::FullUnlabeled ? "FULL_UNLABELED" : "COVARIATES_ONLY";
}

inline std::optional<UnlabeledMode> parse_mode(std::string_view s) {
    if (s == "FULL_UNLABELED") return UnlabeledMode::FullUnlabeled;
    if (s == "COVARIATES_ONLY") return UnlabeledMode::CovariatesOnly;
    return std::nullopt;
}

/// Rows 0..n-1 are labeled, rows n..N-1 unlabeled. Missing values are NaN.
struct StackedData {
    Matrix x;
    Matrix w;
    Vector a;
    Vector y;
    Index n = 0;
    Index m = 0;
    std::vector<Index> w_columns;
    bool unlabeled_has_a = false;

    static StackedData from(const SemiSupervisedDataset& ds) {
        StackedData s;
        s.n = ds.n();
        s.m = ds.m();
        const auto N = static_cast<Eigen::Index>(s.n + s.m);
        const auto n = static_cast<Eigen::Index>(s.n);
        s.x.resize(N, ds.labeled_x.cols());
        s.x.topRows(n) = ds.labeled_x;
        if (s.m > 0) s.x.bottomRows(static_cast<Eigen::Index>(s.m)) = ds.unlabeled_x;
        s.w_columns = ds.w_columns;
        s.w.resize(N, static_cast<Eigen::Index>(ds.w_columns.size()));
        for (std::size_t j = 0; j < ds.w_columns.size(); ++j)
            s.w.col(static_cast<Eigen::Index>(j)) = s.x.col(static_cast<Eigen::Index>(ds.w_columns[j]));
        const double nan = std::numeric_limits<double>::quiet_NaN();
        s.a = Vector::Constant(N, nan);
        s.y = Vector::Constant(N, nan);
        for (Eigen::Index i = 0; i < n; ++i) {
            s.a(i) = ds.labeled_a[static_cast<std::size_t>(i)];
            s.y(i) = ds.labeled_y(i);
        }
        s.unlabeled_has_a = ds.unlabeled_a.has_value() && ds.unlabeled_a->size() == s.m;
        if (s.unlabeled_has_a) {
            for (Index j = 0; j < s.m; ++j) s.a(static_cast<Eigen::Index>(s.n + j)) = (*ds.unlabeled_a)[j];
        }
        return s;
    }

    Index total() const { return n + m; }
};

/// Fitted outcome models for both arms and a propensity model. Training row
/// sets are kept (stacked indexing) so leakage can be audited.
struct NuisancePredictor {
    PredictorPtr mu0;
    PredictorPtr mu1;
    PredictorPtr pi;
    double clip_epsilon = 0.01;
    IndexSet mu0_rows;
    IndexSet mu1_rows;
    IndexSet pi_rows;

    double clip(double p) const { return std::clamp(p, clip_epsilon, 1.0 - clip_epsilon); }
};

/// Doubly robust pseudo-outcome with plugged-in nuisance values; pi_hat must
/// already be clipped into (0, 1).
inline double pseudo_outcome(double y, int a, double mu0_hat, double mu1_hat, double pi_hat) {
    const double mu_a = a == 1 ? mu1_hat : mu0_hat;
    return (static_cast<double>(a) - pi_hat) / (pi_hat * (1.0 - pi_hat)) * (y - mu_a) + mu1_hat - mu0_hat;
}

inline NuisancePredictor fit_nuisances(const StackedData& data, const FoldPlan& plan, Index k, Index k_prime,
                                       const NuisanceLearnerSpec& mu_spec, const NuisanceLearnerSpec& pi_spec,
                                       UnlabeledMode mode, double clip_epsilon, std::uint64_t seed) {
    if (k == k_prime) throw std::invalid_argument("fit_nuisances requires k != k'");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 0.5)) throw std::invalid_argument("clip epsilon must lie in (0, 0.5)");
    const IndexSet labeled = plan.labeled_excluding(k, k_prime);
    NuisancePredictor out;
    out.clip_epsilon = clip_epsilon;
    for (Index i : labeled) (data.a(static_cast<Eigen::Index>(i)) == 1.0 ? out.mu1_rows : out.mu0_rows).push_back(i);
    const auto pair_name = "(" + std::to_string(k + 1) + "," + std::to_string(k_prime + 1) + ")";
    if (out.mu0_rows.empty()) throw FitError("treatment arm 0 absent in training rows of fold pair " + pair_name);
    if (out.mu1_rows.empty()) throw FitError("treatment arm 1 absent in training rows of fold pair " + pair_name);

    out.pi_rows = labeled;
    if (mode == UnlabeledMode::FullUnlabeled && data.m > 0) {
        if (!data.unlabeled_has_a)
            throw ValidationError("FULL_UNLABELED mode needs treatment indicators for unlabeled rows; use COVARIATES_ONLY");
        for (Index j : plan.unlabeled_excluding(k, k_prime)) out.pi_rows.push_back(data.n + j);
    }

    out.mu0 = fit_learner(mu_spec, data.x, data.y, out.mu0_rows, derive_seed(seed, {0}), TargetType::Regression);
    out.mu1 = fit_learner(mu_spec, data.x, data.y, out.mu1_rows, derive_seed(seed, {1}), TargetType::Regression);
    out.pi = fit_learner(pi_spec, data.x, data.a, out.pi_rows, derive_seed(seed, {2}), TargetType::Probability);
    return out;
}

/// Pseudo-outcomes per ordered fold pair and their fold-wise average.
struct PseudoOutcomeTable {
    Index k_folds = 0;
    /// pair[k][k'](i): value of the (k,k') pseudo-outcome at labeled row i,
    /// defined for i in folds k and k' and NaN elsewhere (and when k == k').
    std::vector<std::vector<Vector>> pair;
    /// averaged(i): mean over k' != k of pair[k][k'](i), where k is i's fold.
    Vector averaged;
};

/// nuisances[k][k'] must be populated for every k != k'.
inline PseudoOutcomeTable build_pseudo_outcomes(const StackedData& data, const FoldPlan& plan,
                                                const std::vector<std::vector<NuisancePredictor>>& nuisances) {
    const Index K = plan.k_folds();
    const auto n = static_cast<Eigen::Index>(data.n);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    PseudoOutcomeTable t;
    t.k_folds = K;
    t.pair.assign(K, std::vector<Vector>(K, Vector::Constant(n, nan)));
    t.averaged = Vector::Zero(n);
    for (Index k = 0; k < K; ++k) {
        for (Index kp = 0; kp < K; ++kp) {
            if (kp == k) continue;
            const auto& nu = nuisances.at(k).at(kp);
            IndexSet rows = plan.labeled_fold(k);
            rows.insert(rows.end(), plan.labeled_fold(kp).begin(), plan.labeled_fold(kp).end());
            const Vector m0 = nu.mu0->predict_rows(data.x, rows);
            const Vector m1 = nu.mu1->predict_rows(data.x, rows);
            const Vector pi = nu.pi->predict_rows(data.x, rows);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                const auto i = static_cast<Eigen::Index>(rows[r]);
                const auto rr = static_cast<Eigen::Index>(r);
                t.pair[k][kp](i) = pseudo_outcome(data.y(i), static_cast<int>(data.a(i)), m0(rr), m1(rr), nu.clip(pi(rr)));
            }
        }
        for (Index i : plan.labeled_fold(k)) {
            double s = 0.0;
            for (Index kp = 0; kp < K; ++kp) {
                if (kp != k) s += t.pair[k][kp](static_cast<Eigen::Index>(i));
            }
            t.averaged(static_cast<Eigen::Index>(i)) = s / static_cast<double>(K - 1);
        }
    }
    return t;
}

/// Generic regression on X with any learner, or an L1-penalized linear slope
/// on the W columns (spec must then be LASSO_LINEAR).
struct CateForm {
    enum class Kind { Generic, LinearW };
    Kind kind = Kind::LinearW;
    NuisanceLearnerSpec spec{LearnerKind::LassoLinear};

    static CateForm generic(NuisanceLearnerSpec s) { return {Kind::Generic, std::move(s)}; }
    static CateForm linear_w(NuisanceLearnerSpec s = NuisanceLearnerSpec{LearnerKind::LassoLinear}) {
        if (s.kind() != LearnerKind::LassoLinear) throw std::invalid_argument("LINEAR_W CATE requires a LASSO_LINEAR spec");
        return {Kind::LinearW, std::move(s)};
    }
};

struct CatePredictor {
    PredictorPtr predictor;  // evaluated on rows of the stacked X
    IndexSet training_rows;  // labeled indices used for fitting
    std::optional<Vector> slope;  // beta over W columns for LINEAR_W
};

/// Fold-k CATE: for sample i in fold k' != k the target is the (k,k')
/// pseudo-outcome, i.e. the version that held out both k and i's own fold.
inline CatePredictor fit_cate(const StackedData& data, const FoldPlan& plan, const PseudoOutcomeTable& table,
                              Index k, const CateForm& form, std::uint64_t seed) {
    if (k >= plan.k_folds()) throw std::out_of_range("fold index out of range");
    CatePredictor out;
    out.training_rows = plan.labeled_excluding(k);
    Vector targets = Vector::Constant(static_cast<Eigen::Index>(data.total()), std::numeric_limits<double>::quiet_NaN());
    for (Index i : out.training_rows) {
        const auto ii = static_cast<Eigen::Index>(i);
        targets(ii) = table.pair[k][plan.fold_of_labeled(i)](ii);
    }
    if (form.kind == CateForm::Kind::Generic) {
        out.predictor = fit_learner(form.spec, data.x, targets, out.training_rows, seed, TargetType::Regression);
        return out;
    }
    const auto fit = fit_learner(form.spec, data.w, targets, out.training_rows, seed, TargetType::Regression);
    const auto& lin = dynamic_cast<const LinearPredictor&>(*fit);
    out.slope = lin.coefficients();
    out.predictor = std::make_shared<LinearPredictor>(lin.coefficients(), data.w_columns, false, lin.converged(),
                                                      lin.lambda());
    return out;
}

struct CrossFitConfig {
    Index k_folds = 3;
    std::uint64_t seed = 0;
    double clip_epsilon = 0.01;
    UnlabeledMode mode = UnlabeledMode::FullUnlabeled;
    NuisanceLearnerSpec mu_spec{LearnerKind::LassoLinear};
    NuisanceLearnerSpec pi_spec{LearnerKind::LogisticLasso};
    CateForm cate = CateForm::linear_w();
};

struct CrossFitResult {
    FoldPlan plan;
    std::vector<std::vector<NuisancePredictor>> nuisances;
    PseudoOutcomeTable table;
    std::vector<CatePredictor> cates;
    std::vector<std::string> warnings;
};

/// Seed labels for the independent random streams of one cross-fit run.
namespace seed_tag {
inline constexpr std::uint64_t kPlan = 1;
inline constexpr std::uint64_t kNuisance = 2;
inline constexpr std::uint64_t kCate = 3;
}  // namespace seed_tag

inline CrossFitResult run_crossfit(const StackedData& data, const CrossFitConfig& cfg) {
    CrossFitResult r{make_fold_plan(data.n, data.m, cfg.k_folds, derive_seed(cfg.seed, {seed_tag::kPlan})), {}, {}, {}, {}};
    const Index K = cfg.k_folds;
    r.nuisances.resize(K);
    auto note = [&](const PredictorPtr& p, const std::string& what) {
        if (!p->converged()) r.warnings.push_back(what + " did not converge");
    };
    for (Index k = 0; k < K; ++k) {
        r.nuisances[k].resize(K);
        for (Index kp = 0; kp < K; ++kp) {
            if (kp == k) continue;
            auto& nu = r.nuisances[k][kp];
            nu = fit_nuisances(data, r.plan, k, kp, cfg.mu_spec, cfg.pi_spec, cfg.mode, cfg.clip_epsilon,
                               derive_seed(cfg.seed, {seed_tag::kNuisance, k, kp}));
            const auto tag = "nuisance fit (" + std::to_string(k + 1) + "," + std::to_string(kp + 1) + ") ";
            note(nu.mu0, tag + "mu0");
            note(nu.mu1, tag + "mu1");
            note(nu.pi, tag + "pi");
        }
    }
    r.table = build_pseudo_outcomes(data, r.plan, r.nuisances);
    for (Index k = 0; k < K; ++k) {
        r.cates.push_back(fit_cate(data, r.plan, r.table, k, cfg.cate, derive_seed(cfg.seed, {seed_tag::kCate, k})));
        note(r.cates.back().predictor, "CATE fit " + std::to_string(k + 1));
    }
    return r;
}

}  // namespace hetcate
