#pragma once

// Shared domain types: the semi-supervised dataset, the K-fold plan with its
// leave-one-out / leave-two-out index sets, weight pairs and estimate reports.
// No estimation logic lives here.

#include <Eigen/Core>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hetcate/rng.hpp"

namespace hetcate {

using Index = std::size_t;
using IndexSet = std::vector<Index>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data that fails validation; estimators refuse such datasets.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A nuisance or CATE fit could not be produced.
class FitError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Labeled triples (x, a, y) plus unlabeled covariate rows (x, optional a).
/// Column 0 of every x row is the constant intercept.
struct SemiSupervisedDataset {
    Matrix labeled_x;
    std::vector<int> labeled_a;
    Vector labeled_y;
    Matrix unlabeled_x;
    std::optional<std::vector<int>> unlabeled_a;
    std::vector<Index> w_columns{0};

    Index n() const { return static_cast<Index>(labeled_x.rows()); }
    Index m() const { return static_cast<Index>(unlabeled_x.rows()); }
    Index total() const { return n() + m(); }
    Index d() const { return static_cast<Index>(labeled_x.cols()); }
    Index p() const { return w_columns.size(); }

    /// Same dataset with the unlabeled block removed.
    SemiSupervisedDataset labeled_only() const {
        SemiSupervisedDataset out = *this;
        out.unlabeled_x = Matrix(0, labeled_x.cols());
        out.unlabeled_a = std::vector<int>{};
        return out;
    }
};

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
    std::string summary() const {
        std::string s;
        for (const auto& v : violations) {
            if (!s.empty()) s += "; ";
            s += v;
        }
        return s;
    }
};

inline ValidationReport validate_dataset(const SemiSupervisedDataset& ds) {
    ValidationReport rep;
    auto& v = rep.violations;
    const Index n = ds.n();
    const Index d = ds.d();
    if (n < 1) v.emplace_back("no labeled rows");
    if (d < 1) v.emplace_back("no covariate columns");
    if (ds.labeled_a.size() != n) v.emplace_back("labeled_a length differs from labeled row count");
    if (static_cast<Index>(ds.labeled_y.size()) != n) v.emplace_back("labeled_y length differs from labeled row count");
    if (ds.m() > 0 && static_cast<Index>(ds.unlabeled_x.cols()) != d)
        v.emplace_back("unlabeled_x column count differs from labeled_x");
    if (!v.empty()) return rep;

    if (!ds.labeled_x.allFinite() || !ds.labeled_y.allFinite() || !ds.unlabeled_x.allFinite())
        v.emplace_back("non-finite value (NaN/Inf) in inputs");

    bool intercept_ok = true;
    for (Index i = 0; i < n && intercept_ok; ++i) intercept_ok = ds.labeled_x(i, 0) == 1.0;
    for (Index i = 0; i < ds.m() && intercept_ok; ++i) intercept_ok = ds.unlabeled_x(i, 0) == 1.0;
    if (!intercept_ok) v.emplace_back("intercept column not constant 1");

    bool binary = true;
    bool has0 = false;
    bool has1 = false;
    for (int a : ds.labeled_a) {
        binary = binary && (a == 0 || a == 1);
        has0 = has0 || a == 0;
        has1 = has1 || a == 1;
    }
    if (!binary) v.emplace_back("labeled_a contains values outside {0,1}");
    if (!has0) v.emplace_back("treatment arm 0 absent");
    if (!has1) v.emplace_back("treatment arm 1 absent");

    if (ds.unlabeled_a) {
        if (ds.unlabeled_a->size() != ds.m()) {
            v.emplace_back("unlabeled_a length differs from unlabeled row count");
        } else if (!std::all_of(ds.unlabeled_a->begin(), ds.unlabeled_a->end(),
                                [](int a) { return a == 0 || a == 1; })) {
            v.emplace_back("unlabeled_a contains values outside {0,1}");
        }
    }

    const auto& w = ds.w_columns;
    if (w.empty() || w.front() != 0) v.emplace_back("w_columns must contain column 0");
    if (!std::is_sorted(w.begin(), w.end()) || std::adjacent_find(w.begin(), w.end()) != w.end())
        v.emplace_back("w_columns must be sorted and duplicate-free");
    if (!w.empty() && *std::max_element(w.begin(), w.end()) >= d) v.emplace_back("w_columns index out of range");
    return rep;
}

// ---------------------------------------------------------------------------
// Fold plan
// ---------------------------------------------------------------------------

/// K-fold partition of labeled indices {0..n-1} and unlabeled indices
/// {0..m-1}. Fold numbers are 0-based. Derived sets are computed on demand.
class FoldPlan {
public:
    FoldPlan(Index n, Index m, std::vector<IndexSet> labeled, std::vector<IndexSet> unlabeled, std::uint64_t seed)
        : n_(n), m_(m), labeled_(std::move(labeled)), unlabeled_(std::move(unlabeled)), seed_(seed),
          labeled_fold_of_(n), unlabeled_fold_of_(m) {
        for (Index k = 0; k < labeled_.size(); ++k) {
            for (Index i : labeled_[k]) labeled_fold_of_[i] = k;
            for (Index j : unlabeled_[k]) unlabeled_fold_of_[j] = k;
        }
    }

    Index k_folds() const { return labeled_.size(); }
    Index n() const { return n_; }
    Index m() const { return m_; }
    std::uint64_t seed() const { return seed_; }

    const std::vector<IndexSet>& labeled_folds() const { return labeled_; }
    const std::vector<IndexSet>& unlabeled_folds() const { return unlabeled_; }
    const IndexSet& labeled_fold(Index k) const { return labeled_.at(k); }
    const IndexSet& unlabeled_fold(Index k) const { return unlabeled_.at(k); }
    Index fold_of_labeled(Index i) const { return labeled_fold_of_.at(i); }
    Index fold_of_unlabeled(Index j) const { return unlabeled_fold_of_.at(j); }

    /// I_{-k,-k'}: labeled indices outside folds k and k'.
    IndexSet labeled_excluding(Index k, Index k_prime) const { return excluding(labeled_fold_of_, k, k_prime); }
    /// J_{-k,-k'}: unlabeled indices outside folds k and k'.
    IndexSet unlabeled_excluding(Index k, Index k_prime) const { return excluding(unlabeled_fold_of_, k, k_prime); }
    /// Union of labeled folds other than k (training rows of the fold-k CATE).
    IndexSet labeled_excluding(Index k) const { return excluding(labeled_fold_of_, k, k); }

    /// G_k in stacked indexing: labeled i -> i, unlabeled j -> n + j.
    IndexSet stacked_fold(Index k) const {
        IndexSet out = labeled_.at(k);
        for (Index j : unlabeled_.at(k)) out.push_back(n_ + j);
        return out;
    }
    /// G_{-k,-k'} in stacked indexing.
    IndexSet stacked_excluding(Index k, Index k_prime) const {
        IndexSet out = labeled_excluding(k, k_prime);
        for (Index j : unlabeled_excluding(k, k_prime)) out.push_back(n_ + j);
        return out;
    }

    bool operator==(const FoldPlan&) const = default;

private:
    static IndexSet excluding(const std::vector<Index>& fold_of, Index k, Index k_prime) {
        IndexSet out;
        out.reserve(fold_of.size());
        for (Index i = 0; i < fold_of.size(); ++i) {
            if (fold_of[i] != k && fold_of[i] != k_prime) out.push_back(i);
        }
        return out;
    }

    Index n_;
    Index m_;
    std::vector<IndexSet> labeled_;
    std::vector<IndexSet> unlabeled_;
    std::uint64_t seed_;
    std::vector<Index> labeled_fold_of_;
    std::vector<Index> unlabeled_fold_of_;
};

namespace detail {

// Shuffle 0..count-1, then deal contiguous blocks; the first (count mod K)
// folds receive one extra index.
inline std::vector<IndexSet> partition(Index count, Index k_folds, Rng rng) {
    IndexSet order(count);
    for (Index i = 0; i < count; ++i) order[i] = i;
    rng.shuffle(std::span<Index>(order));
    std::vector<IndexSet> folds(k_folds);
    const Index base = count / k_folds;
    const Index extra = count % k_folds;
    Index pos = 0;
    for (Index k = 0; k < k_folds; ++k) {
        const Index size = base + (k < extra ? 1 : 0);
        folds[k].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                        order.begin() + static_cast<std::ptrdiff_t>(pos + size));
        std::sort(folds[k].begin(), folds[k].end());
        pos += size;
    }
    return folds;
}

}  // namespace detail

inline FoldPlan make_fold_plan(Index n, Index m, Index k_folds, std::uint64_t seed) {
    if (k_folds < 3) throw std::invalid_argument("algorithms require K >= 3");
    if (n < k_folds) throw std::invalid_argument("labeled sample size n must be at least K");
    if (m > 0 && m < k_folds) throw std::invalid_argument("unlabeled sample size m must be 0 or at least K");
    auto labeled = detail::partition(n, k_folds, Rng(derive_seed(seed, {0})));
    auto unlabeled = detail::partition(m, k_folds, Rng(derive_seed(seed, {1})));
    return FoldPlan(n, m, std::move(labeled), std::move(unlabeled), seed);
}

// ---------------------------------------------------------------------------
// Weights and reports
// ---------------------------------------------------------------------------

/// Per-unit weights on labeled and unlabeled rows of the plug-in term,
/// constrained by n * omega_l + m * omega_u = 1.
class WeightPair {
public:
    WeightPair(double omega_l, double omega_u, Index n, Index m, bool degenerate = false)
        : omega_l_(omega_l), omega_u_(m == 0 ? 0.0 : omega_u), n_(n), m_(m), degenerate_(degenerate) {
        if (n == 0) throw std::invalid_argument("WeightPair requires n >= 1");
        const double nl = static_cast<double>(n) * omega_l_;
        const double mu = static_cast<double>(m) * omega_u_;
        const double scale = std::max(1.0, std::abs(nl) + std::abs(mu));
        if (!(std::abs(nl + mu - 1.0) <= 1e-12 * scale))
            throw std::logic_error("WeightPair violates n*omega_l + m*omega_u = 1");
    }

    static WeightPair equal(Index n, Index m, bool degenerate = false) {
        const double w = 1.0 / static_cast<double>(n + m);
        return WeightPair(w, w, n, m, degenerate);
    }

    double omega_l() const { return omega_l_; }
    double omega_u() const { return omega_u_; }
    Index n() const { return n_; }
    Index m() const { return m_; }
    /// True when the weights fell back to 1/N because B-hat was degenerate.
    bool degenerate() const { return degenerate_; }

private:
    double omega_l_;
    double omega_u_;
    Index n_;
    Index m_;
    bool degenerate_;
};

enum class Estimand { Tth, EthDirect, EthOw, EthSpow };

inline std::string_view to_string(Estimand e) {
    switch (e) {
        case Estimand::Tth: return "TTH";
        case Estimand::EthDirect: return "ETH_DIRECT";
        case Estimand::EthOw: return "ETH_OW";
        case Estimand::EthSpow: return "ETH_SPOW";
    }
    return "?";
}

inline std::optional<Estimand> parse_estimand(std::string_view s) {
    for (Estimand e : {Estimand::Tth, Estimand::EthDirect, Estimand::EthOw, Estimand::EthSpow}) {
        if (to_string(e) == s) return e;
    }
    return std::nullopt;
}

struct FoldDiagnostics {
    Index fold = 0;
    double a_hat = 0.0;
    double b_hat = 0.0;
    double c_hat = 0.0;
    double q_hat = 0.0;
    double omega_l = 0.0;
    double omega_u = 0.0;
    bool degenerate = false;

    bool operator==(const FoldDiagnostics&) const = default;
};

struct EstimateReport {
    Estimand estimand = Estimand::Tth;
    double point = 0.0;
    double std_error = 0.0;
    double ci_level = 0.95;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    double p_value_one_sided = 1.0;
    double ate_hat = 0.0;
    Index n = 0;
    Index m = 0;
    Index k_folds = 0;
    std::vector<FoldDiagnostics> diagnostics;
    std::vector<std::string> warnings;

    bool operator==(const EstimateReport&) const = default;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Two-sided critical value z such that P(|Z| <= z) = level.
inline double normal_critical_value(double level) {
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must lie in (0,1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + 0.5 * level);
}

/// Fills CI and one-sided p-value (H0: theta = 0 vs H1: theta > 0).
inline void finalize_inference(EstimateReport& r) {
    const double z = normal_critical_value(r.ci_level);
    r.ci_lower = r.point - z * r.std_error;
    r.ci_upper = r.point + z * r.std_error;
    if (r.std_error > 0.0) {
        r.p_value_one_sided = normal_cdf(-r.point / r.std_error);
    } else {
        r.p_value_one_sided = r.point > 0.0 ? 0.0 : 1.0;
    }
}

}  // namespace hetcate
