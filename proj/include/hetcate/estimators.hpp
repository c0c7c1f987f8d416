#pragma once

// Semi-supervised estimators of treatment heterogeneity:
//
//   TTH         Var[tau(X)] with a generic CATE learner
//   ETH_DIRECT  Var[W'beta*] with equal 1/N weights on the plug-in term
//   ETH_OW      Var[W'beta*] with per-fold optimal labeled/unlabeled weights
//   ETH_SPOW    ETH_OW with nonparametric nuisance learners
//
// All four share the cross-fitting stage; they differ in the CATE form, the
// weighting of the plug-in term and the variance estimator.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hetcate/core_model.hpp"
#include "hetcate/crossfit.hpp"

namespace hetcate {

/// Cross-fitted plug-in moments of one fold (see compute_moments).
struct MomentTriple {
    double a_hat = 0.0;
    double b_hat = 0.0;
    double c_hat = 0.0;
    double q_hat = 0.0;
    Index fold = 0;
};

/// Per-fold pieces shared by every estimator. `proj` is the centered CATE
/// prediction: h^(-k)(X_i) on the TTH path and D_i'beta^(-k) on ETH paths
/// (the two coincide for a linear CATE).
struct FoldComponents {
    Vector proj_labeled;    // on I_k, in plan order
    Vector proj_unlabeled;  // on J_k, in plan order
    Vector residual;        // phi^(-k)(Z_i) - tau_hat - proj_i on I_k
};

struct TthComponents {
    std::vector<FoldComponents> folds;
    double ate_hat = 0.0;
    Index n = 0;
    Index m = 0;
};

struct EstimatorConfig {
    Index k_folds = 3;
    std::uint64_t seed = 0;
    double clip_epsilon = 0.01;
    double ci_level = 0.95;
    UnlabeledMode mode = UnlabeledMode::FullUnlabeled;
    /// Unset specs take estimator-specific defaults (see default_specs).
    std::optional<NuisanceLearnerSpec> mu_spec;
    std::optional<NuisanceLearnerSpec> pi_spec;
    /// TTH: any regression learner on X. ETH estimators: LASSO_LINEAR on W.
    std::optional<NuisanceLearnerSpec> cate_spec;
};

/// Defaults: parametric lasso / logistic lasso nuisances except for ETH_SPOW
/// (boosted stumps); boosted-stump CATE for TTH, lasso slope on W otherwise.
inline CrossFitConfig resolve_crossfit_config(Estimand e, const EstimatorConfig& c) {
    CrossFitConfig cf;
    cf.k_folds = c.k_folds;
    cf.seed = c.seed;
    cf.clip_epsilon = c.clip_epsilon;
    cf.mode = c.mode;
    const bool nonparametric = e == Estimand::EthSpow;
    cf.mu_spec = c.mu_spec.value_or(NuisanceLearnerSpec(nonparametric ? LearnerKind::BoostedStumps : LearnerKind::LassoLinear));
    cf.pi_spec = c.pi_spec.value_or(NuisanceLearnerSpec(nonparametric ? LearnerKind::BoostedStumps : LearnerKind::LogisticLasso));
    if (e == Estimand::Tth) {
        cf.cate = CateForm::generic(c.cate_spec.value_or(NuisanceLearnerSpec(LearnerKind::BoostedStumps)));
    } else {
        cf.cate = CateForm::linear_w(c.cate_spec.value_or(NuisanceLearnerSpec(LearnerKind::LassoLinear)));
    }
    return cf;
}

// ---------------------------------------------------------------------------
// Algebra on fold components
// ---------------------------------------------------------------------------

/// Semi-supervised ATE: N^-1 sum over all rows of tau^(-k)(X_i) plus the
/// labeled mean of phi^(-k)(Z_i) - tau^(-k)(X_i).
inline double estimate_ate(const StackedData& data, const FoldPlan& plan, const PseudoOutcomeTable& table,
                           const std::vector<CatePredictor>& cates) {
    const double N = static_cast<double>(data.total());
    const double n = static_cast<double>(data.n);
    double plug = 0.0;
    double corr = 0.0;
    for (Index k = 0; k < plan.k_folds(); ++k) {
        const auto& pred = *cates.at(k).predictor;
        const IndexSet& lab = plan.labeled_fold(k);
        const Vector tl = pred.predict_rows(data.x, lab);
        for (Index j : plan.unlabeled_fold(k)) plug += pred.predict(data.x, data.n + j);
        plug += tl.sum();
        for (std::size_t r = 0; r < lab.size(); ++r)
            corr += table.averaged(static_cast<Eigen::Index>(lab[r])) - tl(static_cast<Eigen::Index>(r));
    }
    return plug / N + corr / n;
}

/// Centers fold-k CATE predictions over G_k and forms the labeled residuals.
inline TthComponents build_components(const StackedData& data, const FoldPlan& plan, const PseudoOutcomeTable& table,
                                      const std::vector<CatePredictor>& cates) {
    TthComponents c;
    c.n = data.n;
    c.m = data.m;
    c.ate_hat = estimate_ate(data, plan, table, cates);
    for (Index k = 0; k < plan.k_folds(); ++k) {
        const auto& pred = *cates.at(k).predictor;
        const IndexSet& lab = plan.labeled_fold(k);
        IndexSet unl;
        for (Index j : plan.unlabeled_fold(k)) unl.push_back(data.n + j);
        FoldComponents f;
        f.proj_labeled = pred.predict_rows(data.x, lab);
        f.proj_unlabeled = pred.predict_rows(data.x, unl);
        const double center = (f.proj_labeled.sum() + f.proj_unlabeled.sum()) /
                              static_cast<double>(lab.size() + unl.size());
        f.proj_labeled.array() -= center;
        f.proj_unlabeled.array() -= center;
        f.residual.resize(f.proj_labeled.size());
        for (std::size_t r = 0; r < lab.size(); ++r) {
            const auto rr = static_cast<Eigen::Index>(r);
            f.residual(rr) = table.averaged(static_cast<Eigen::Index>(lab[r])) - c.ate_hat - f.proj_labeled(rr);
        }
        c.folds.push_back(std::move(f));
    }
    return c;
}

/// Equal-weight plug-in plus debiasing term (TTH and ETH_DIRECT point estimate).
inline double direct_point(const TthComponents& c) {
    const double N = static_cast<double>(c.n + c.m);
    const double n = static_cast<double>(c.n);
    double plug = 0.0;
    double debias = 0.0;
    for (const auto& f : c.folds) {
        plug += f.proj_labeled.squaredNorm() + f.proj_unlabeled.squaredNorm();
        debias += f.proj_labeled.dot(f.residual);
    }
    return plug / N + 2.0 * debias / n;
}

/// Plug-in term weighted per fold by (omega_L^(k), omega_U^(k)) plus debiasing term.
inline double weighted_point(const TthComponents& c, std::span<const WeightPair> weights) {
    const double n = static_cast<double>(c.n);
    double total = 0.0;
    for (std::size_t k = 0; k < c.folds.size(); ++k) {
        const auto& f = c.folds[k];
        total += weights[k].omega_l() * f.proj_labeled.squaredNorm() +
                 weights[k].omega_u() * f.proj_unlabeled.squaredNorm() + 2.0 * f.proj_labeled.dot(f.residual) / n;
    }
    return total;
}

/// A-hat, B-hat, C-hat and Q-hat of one fold from labeled residuals and
/// projections on I_k (labeled) and J_k (unlabeled).
inline MomentTriple compute_moments(Index fold, const Vector& residual, const Vector& proj_labeled,
                                    const Vector& proj_unlabeled) {
    MomentTriple t;
    t.fold = fold;
    const double nl = static_cast<double>(proj_labeled.size());
    const double ng = static_cast<double>(proj_labeled.size() + proj_unlabeled.size());
    const double q = (proj_labeled.squaredNorm() + proj_unlabeled.squaredNorm()) / ng;
    const double fourth = (proj_labeled.array().square().square().sum() + proj_unlabeled.array().square().square().sum()) / ng;
    const Eigen::ArrayXd debias = 2.0 * residual.array() * proj_labeled.array();
    t.q_hat = q;
    t.a_hat = debias.square().sum() / nl;
    t.b_hat = fourth - q * q;
    t.c_hat = (debias * (proj_labeled.array().square() - q)).sum() / nl;
    return t;
}

inline std::vector<MomentTriple> fold_moments(const TthComponents& c) {
    std::vector<MomentTriple> out;
    for (std::size_t k = 0; k < c.folds.size(); ++k) {
        const auto& f = c.folds[k];
        out.push_back(compute_moments(k, f.residual, f.proj_labeled, f.proj_unlabeled));
    }
    return out;
}

/// B-hat at or below this is treated as degenerate.
inline double b_hat_floor(double q_hat) { return 1e-8 * q_hat * q_hat + 1e-12; }

/// Estimated optimal weights; equal weights 1/N (flagged) when B-hat is degenerate.
inline WeightPair optimal_weights(double b_hat, double c_hat, Index n, Index m, double q_hat = 0.0) {
    if (n == 0) throw std::invalid_argument("optimal_weights requires n >= 1");
    if (!(b_hat > b_hat_floor(q_hat))) return WeightPair::equal(n, m, true);
    const double nd = static_cast<double>(n);
    const double md = static_cast<double>(m);
    const double N = nd + md;
    const double omega_l = (nd * b_hat - md * c_hat) / (nd * N * b_hat);
    const double omega_u = (b_hat + c_hat) / (N * b_hat);
    return WeightPair(omega_l, omega_u, n, m);
}

/// sigma^2 with equal weights: A + (n/N) B + 2 (n/N) C, B floored at 0.
inline double direct_variance(double a_hat, double b_hat, double c_hat, Index n, Index N) {
    const double r = static_cast<double>(n) / static_cast<double>(N);
    return a_hat + r * std::max(b_hat, 0.0) + 2.0 * r * c_hat;
}

/// Per-fold optimally weighted variance A + nB/N + 2nC/N - mC^2/(NB); falls
/// back to direct_variance when B-hat is degenerate.
inline double ow_variance(double a_hat, double b_hat, double c_hat, Index n, Index m, Index N, double q_hat = 0.0) {
    if (N != n + m) throw std::invalid_argument("ow_variance requires N = n + m");
    if (!(b_hat > b_hat_floor(q_hat))) return direct_variance(a_hat, b_hat, c_hat, n, N);
    const double nd = static_cast<double>(n);
    const double md = static_cast<double>(m);
    const double Nd = static_cast<double>(N);
    return a_hat + nd * b_hat / Nd + 2.0 * nd * c_hat / Nd - md * c_hat * c_hat / (Nd * b_hat);
}

namespace detail {

inline double centered_variance(const Eigen::ArrayXd& v) {
    if (v.size() == 0) return 0.0;
    const double mean = v.mean();
    return (v - mean).square().mean();
}

}  // namespace detail

/// Fold-averaged plug-in for the TTH asymptotic variance:
/// Var_{I_k}(2 xi h) + (n/N) Var_{G_k}(h^2).
inline double tth_variance(const TthComponents& c, Index n, Index m, Index N) {
    if (N != n + m) throw std::invalid_argument("tth_variance requires N = n + m");
    const double r = static_cast<double>(n) / static_cast<double>(N);
    double total = 0.0;
    for (const auto& f : c.folds) {
        const Eigen::ArrayXd debias = 2.0 * f.residual.array() * f.proj_labeled.array();
        Eigen::ArrayXd sq(f.proj_labeled.size() + f.proj_unlabeled.size());
        sq << f.proj_labeled.array().square(), f.proj_unlabeled.array().square();
        total += detail::centered_variance(debias) + r * detail::centered_variance(sq);
    }
    return total / static_cast<double>(c.folds.size());
}

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

namespace detail {

inline StackedData validated_stack(const SemiSupervisedDataset& ds, const EstimatorConfig& cfg) {
    const auto rep = validate_dataset(ds);
    if (!rep.ok()) throw ValidationError(rep.summary());
    if (cfg.mode == UnlabeledMode::FullUnlabeled && ds.m() > 0 && !ds.unlabeled_a)
        throw ValidationError("unlabeled rows lack treatment indicators; use COVARIATES_ONLY mode");
    return StackedData::from(ds);
}

inline EstimateReport finish(Estimand e, const EstimatorConfig& cfg, const TthComponents& comp, double point,
                             double variance, std::vector<std::string> warnings) {
    EstimateReport r;
    r.estimand = e;
    r.point = point;
    r.ci_level = cfg.ci_level;
    r.ate_hat = comp.ate_hat;
    r.n = comp.n;
    r.m = comp.m;
    r.k_folds = comp.folds.size();
    if (variance < 0.0) {
        warnings.push_back("negative variance estimate floored at 0");
        variance = 0.0;
    }
    r.std_error = std::sqrt(variance / static_cast<double>(comp.n));
    r.warnings = std::move(warnings);
    finalize_inference(r);
    return r;
}

inline FoldDiagnostics diagnostics_of(const MomentTriple& t, const WeightPair& w) {
    return {t.fold, t.a_hat, t.b_hat, t.c_hat, t.q_hat, w.omega_l(), w.omega_u(), w.degenerate()};
}

/// ETH_DIRECT when `optimal` is false, otherwise the optimally weighted form.
inline EstimateReport eth_from_components(Estimand e, const EstimatorConfig& cfg, const TthComponents& comp,
                                          std::vector<std::string> warnings, bool optimal) {
    const Index n = comp.n;
    const Index m = comp.m;
    const auto moments = fold_moments(comp);
    std::vector<WeightPair> weights;
    double variance = 0.0;
    EstimateReport r;
    for (const auto& t : moments) {
        if (optimal) {
            weights.push_back(optimal_weights(t.b_hat, t.c_hat, n, m, t.q_hat));
            variance += ow_variance(t.a_hat, t.b_hat, t.c_hat, n, m, n + m, t.q_hat);
        } else {
            weights.push_back(m == 0 ? WeightPair(1.0 / static_cast<double>(n), 0.0, n, 0) : WeightPair::equal(n, m));
            variance += direct_variance(t.a_hat, t.b_hat, t.c_hat, n, n + m);
        }
        if (weights.back().degenerate()) warnings.push_back("fold " + std::to_string(t.fold + 1) + ": degenerate B-hat, equal weights used");
    }
    variance /= static_cast<double>(moments.size());
    const double point = optimal ? weighted_point(comp, weights) : direct_point(comp);
    r = finish(e, cfg, comp, point, variance, std::move(warnings));
    for (std::size_t k = 0; k < moments.size(); ++k) r.diagnostics.push_back(diagnostics_of(moments[k], weights[k]));
    return r;
}

}  // namespace detail

/// Runs the cross-fitting stage for estimand `e` and returns its components.
inline std::pair<TthComponents, CrossFitResult> crossfit_components(Estimand e, const SemiSupervisedDataset& ds,
                                                                    const EstimatorConfig& cfg) {
    const StackedData data = detail::validated_stack(ds, cfg);
    auto cf = run_crossfit(data, resolve_crossfit_config(e, cfg));
    auto comp = build_components(data, cf.plan, cf.table, cf.cates);
    return {std::move(comp), std::move(cf)};
}

inline EstimateReport estimate_tth(const SemiSupervisedDataset& ds, const EstimatorConfig& cfg) {
    auto [comp, cf] = crossfit_components(Estimand::Tth, ds, cfg);
    const double point = direct_point(comp);
    const double variance = tth_variance(comp, comp.n, comp.m, comp.n + comp.m);
    return detail::finish(Estimand::Tth, cfg, comp, point, variance, std::move(cf.warnings));
}

inline EstimateReport estimate_eth_direct(const SemiSupervisedDataset& ds, const EstimatorConfig& cfg) {
    auto [comp, cf] = crossfit_components(Estimand::EthDirect, ds, cfg);
    return detail::eth_from_components(Estimand::EthDirect, cfg, comp, std::move(cf.warnings), false);
}

inline EstimateReport estimate_eth_ow(const SemiSupervisedDataset& ds, const EstimatorConfig& cfg) {
    auto [comp, cf] = crossfit_components(Estimand::EthOw, ds, cfg);
    return detail::eth_from_components(Estimand::EthOw, cfg, comp, std::move(cf.warnings), true);
}

inline EstimateReport estimate_eth_spow(const SemiSupervisedDataset& ds, const EstimatorConfig& cfg) {
    auto [comp, cf] = crossfit_components(Estimand::EthSpow, ds, cfg);
    return detail::eth_from_components(Estimand::EthSpow, cfg, comp, std::move(cf.warnings), true);
}

inline EstimateReport estimate(Estimand e, const SemiSupervisedDataset& ds, const EstimatorConfig& cfg) {
    switch (e) {
        case Estimand::Tth: return estimate_tth(ds, cfg);
        case Estimand::EthDirect: return estimate_eth_direct(ds, cfg);
        case Estimand::EthOw: return estimate_eth_ow(ds, cfg);
        case Estimand::EthSpow: return estimate_eth_spow(ds, cfg);
    }
    throw std::invalid_argument("unknown estimand");
}

}  // namespace hetcate
