#pragma once

// Pluggable nuisance learners behind a uniform predict interface:
// lasso, logistic lasso, gradient-boosted stumps and k-nearest neighbours.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hetcate/lambda_cv.hpp"

namespace hetcate {

enum class TargetType { Regression, Probability };

class Predictor {
public:
    virtual ~Predictor() = default;

    /// Prediction for row `row` of x.
    virtual double predict(const Matrix& x, Index row) const = 0;

    virtual Vector predict_rows(const Matrix& x, std::span<const Index> rows) const {
        Vector out(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Eigen::Index>(r)) = predict(x, rows[r]);
        return out;
    }

    /// False when the underlying solver hit its iteration limit or diverged.
    virtual bool converged() const { return true; }
};

using PredictorPtr = std::shared_ptr<const Predictor>;

class ConstantPredictor final : public Predictor {
public:
    explicit ConstantPredictor(double value) : value_(value) {}
    double predict(const Matrix&, Index) const override { return value_; }

private:
    double value_;
};

/// x' coef over a selection of columns (all columns when `columns` is empty),
/// optionally passed through the logistic link.
class LinearPredictor final : public Predictor {
public:
    LinearPredictor(Vector coefficients, std::vector<Index> columns, bool logistic_link, bool converged = true,
                    double lambda = 0.0)
        : coef_(std::move(coefficients)), columns_(std::move(columns)), logistic_(logistic_link),
          converged_(converged), lambda_(lambda) {}

    double predict(const Matrix& x, Index row) const override {
        double s = 0.0;
        for (Eigen::Index j = 0; j < coef_.size(); ++j) {
            if (coef_(j) == 0.0) continue;
            const Index col = columns_.empty() ? static_cast<Index>(j) : columns_[static_cast<std::size_t>(j)];
            s += coef_(j) * x(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
        }
        return logistic_ ? logistic(s) : s;
    }

    bool converged() const override { return converged_; }
    const Vector& coefficients() const { return coef_; }
    const std::vector<Index>& columns() const { return columns_; }
    double lambda() const { return lambda_; }

private:
    Vector coef_;
    std::vector<Index> columns_;
    bool logistic_;
    bool converged_;
    double lambda_;
};

struct Stump {
    Index feature = 0;
    double threshold = 0.0;
    double left = 0.0;   // x <= threshold
    double right = 0.0;  // x > threshold
};

/// Additive ensemble of depth-1 trees; leaf values already include the
/// learning rate. In probability mode the sum is a log-odds score.
class StumpEnsemble final : public Predictor {
public:
    StumpEnsemble(double base, std::vector<Stump> stumps, bool probability)
        : base_(base), stumps_(std::move(stumps)), probability_(probability) {}

    double predict(const Matrix& x, Index row) const override {
        double f = base_;
        for (const auto& s : stumps_) {
            f += x(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(s.feature)) <= s.threshold ? s.left
                                                                                                       : s.right;
        }
        return probability_ ? logistic(f) : f;
    }

    std::size_t size() const { return stumps_.size(); }

private:
    double base_;
    std::vector<Stump> stumps_;
    bool probability_;
};

/// Mean target among the k nearest training rows (Euclidean distance over the
/// non-intercept columns). Probability mode returns (hits + 1) / (k + 2) so the
/// output stays inside (0, 1).
class KnnPredictor final : public Predictor {
public:
    KnnPredictor(Matrix train_x, Vector train_y, Index k, bool probability)
        : x_(std::move(train_x)), y_(std::move(train_y)), k_(k), probability_(probability) {}

    double predict(const Matrix& x, Index row) const override {
        const Eigen::Index rows = x_.rows();
        std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(rows));
        for (Eigen::Index i = 0; i < rows; ++i) {
            double s = 0.0;
            for (Eigen::Index c = 1; c < x_.cols(); ++c) {
                const double diff = x_(i, c) - x(static_cast<Eigen::Index>(row), c);
                s += diff * diff;
            }
            dist[static_cast<std::size_t>(i)] = {s, i};
        }
        const auto kth = dist.begin() + static_cast<std::ptrdiff_t>(k_);
        if (k_ < dist.size()) std::nth_element(dist.begin(), kth - 1, dist.end());
        double sum = 0.0;
        for (auto it = dist.begin(); it != kth; ++it) sum += y_(it->second);
        const double kd = static_cast<double>(k_);
        return probability_ ? (sum + 1.0) / (kd + 2.0) : sum / kd;
    }

private:
    Matrix x_;
    Vector y_;
    Index k_;
    bool probability_;
};

// ---------------------------------------------------------------------------
// Learner specs
// ---------------------------------------------------------------------------

enum class LearnerKind { LassoLinear, LogisticLasso, BoostedStumps, Knn };

inline std::string_view to_string(LearnerKind k) {
    switch (k) {
        case LearnerKind::LassoLinear: return "LASSO_LINEAR";
        case LearnerKind::LogisticLasso: return "LOGISTIC_LASSO";
        case LearnerKind::BoostedStumps: return "BOOSTED_STUMPS";
        case LearnerKind::Knn: return "KNN";
    }
    return "?";
}

inline std::optional<LearnerKind> parse_learner_kind(std::string_view s) {
    for (auto k : {LearnerKind::LassoLinear, LearnerKind::LogisticLasso, LearnerKind::BoostedStumps, LearnerKind::Knn}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

/// Learner kind plus named hyperparameters, validated at construction.
///
///   LASSO_LINEAR / LOGISTIC_LASSO: lambda (fixed; else CV), cv_folds = 5,
///                                   grid_size = 20, c_min = 0.01, c_max = 10
///   BOOSTED_STUMPS: rounds = 200, learning_rate = 0.1, min_leaf = 10
///   KNN: k = 10
class NuisanceLearnerSpec {
public:
    explicit NuisanceLearnerSpec(LearnerKind kind, std::map<std::string, double> hyper = {})
        : kind_(kind), hyper_(std::move(hyper)) {
        for (const auto& [name, value] : hyper_) validate(name, value);
        if (has("c_min") || has("c_max")) {
            if (get("c_min") > get("c_max")) throw std::invalid_argument("c_min must not exceed c_max");
        }
    }

    LearnerKind kind() const { return kind_; }
    const std::map<std::string, double>& hyperparameters() const { return hyper_; }
    bool has(const std::string& name) const { return hyper_.count(name) > 0; }

    /// Value or documented default.
    double get(const std::string& name) const {
        if (auto it = hyper_.find(name); it != hyper_.end()) return it->second;
        for (const auto& p : allowed(kind_)) {
            if (p.name == name) return p.fallback;
        }
        throw std::invalid_argument("unknown hyperparameter '" + name + "'");
    }

    bool supports(TargetType t) const {
        switch (kind_) {
            case LearnerKind::LassoLinear: return t == TargetType::Regression;
            case LearnerKind::LogisticLasso: return t == TargetType::Probability;
            default: return true;
        }
    }

    bool operator==(const NuisanceLearnerSpec&) const = default;

private:
    struct Param {
        std::string_view name;
        double fallback;
        bool integer;
        double min;
        double max;
    };

    static std::vector<Param> allowed(LearnerKind k) {
        constexpr double inf = std::numeric_limits<double>::infinity();
        switch (k) {
            case LearnerKind::LassoLinear:
            case LearnerKind::LogisticLasso:
                return {{"lambda", 0.0, false, 0.0, inf},   {"cv_folds", 5, true, 2, inf},
                        {"grid_size", 20, true, 1, inf},    {"c_min", 0.01, false, 1e-300, inf},
                        {"c_max", 10.0, false, 1e-300, inf}};
            case LearnerKind::BoostedStumps:
                return {{"rounds", 200, true, 0, inf}, {"learning_rate", 0.1, false, 1e-300, 1.0},
                        {"min_leaf", 10, true, 1, inf}};
            case LearnerKind::Knn: return {{"k", 10, true, 1, inf}};
        }
        return {};
    }

    void validate(const std::string& name, double value) const {
        for (const auto& p : allowed(kind_)) {
            if (p.name != name) continue;
            if (!std::isfinite(value) || value < p.min || value > p.max || (p.integer && std::floor(value) != value))
                throw std::invalid_argument("invalid value for hyperparameter '" + name + "' of " +
                                            std::string(to_string(kind_)));
            return;
        }
        throw std::invalid_argument("hyperparameter '" + name + "' is not valid for " + std::string(to_string(kind_)));
    }

    LearnerKind kind_;
    std::map<std::string, double> hyper_;
};

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> lambda_path_for(const NuisanceLearnerSpec& spec, Index d, Index rows) {
    LambdaGridOptions g;
    g.size = static_cast<Index>(spec.get("grid_size"));
    g.c_min = spec.get("c_min");
    g.c_max = spec.get("c_max");
    return default_lambda_grid(d, rows, g);
}

inline PredictorPtr fit_penalized(const NuisanceLearnerSpec& spec, const Matrix& x, const Vector& t,
                                  std::span<const Index> subset, std::uint64_t seed, bool logistic_model) {
    const auto problem = logistic_model ? PenalizedProblem::Logistic : PenalizedProblem::Lasso;
    std::vector<double> path;
    if (spec.has("lambda")) {
        path = {spec.get("lambda")};
    } else {
        const auto grid = lambda_path_for(spec, static_cast<Index>(x.cols()), subset.size());
        const auto cv = cv_lambda_path(problem, x, t, subset, static_cast<Index>(spec.get("cv_folds")), grid, seed);
        path.assign(grid.begin(), grid.begin() + static_cast<std::ptrdiff_t>(cv.best + 1));
    }
    if (logistic_model) {
        auto fit = fit_logistic_lasso_along(x, t, subset, path);
        return std::make_shared<LinearPredictor>(std::move(fit.coefficients), std::vector<Index>{}, true, fit.converged,
                                                 fit.lambda);
    }
    auto fit = fit_lasso_along(x, t, subset, path);
    return std::make_shared<LinearPredictor>(std::move(fit.coefficients), std::vector<Index>{}, false, fit.converged,
                                             fit.lambda);
}

inline PredictorPtr fit_stumps(const NuisanceLearnerSpec& spec, const Matrix& x, const Vector& t,
                               std::span<const Index> subset, bool probability) {
    const Index rounds = static_cast<Index>(spec.get("rounds"));
    const double rate = spec.get("learning_rate");
    const Index min_leaf = static_cast<Index>(spec.get("min_leaf"));
    const Index ns = subset.size();
    const Vector ts = gather(t, subset);

    double base;
    if (probability) {
        const double rate1 = std::clamp(ts.mean(), 1e-6, 1.0 - 1e-6);
        base = std::log(rate1 / (1.0 - rate1));
    } else {
        base = ts.mean();
    }
    if (rounds == 0 || ns < 2 * min_leaf) return std::make_shared<StumpEnsemble>(base, std::vector<Stump>{}, probability);

    // Pre-sorted row order for every non-constant feature.
    struct Feature {
        Index column;
        std::vector<Index> order;
        std::vector<double> values;
    };
    std::vector<Feature> features;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        Feature f;
        f.column = static_cast<Index>(c);
        f.order.resize(ns);
        std::iota(f.order.begin(), f.order.end(), Index{0});
        std::stable_sort(f.order.begin(), f.order.end(),
                         [&](Index a, Index b) { return x(subset[a], c) < x(subset[b], c); });
        f.values.resize(ns);
        for (Index r = 0; r < ns; ++r) f.values[r] = x(subset[f.order[r]], c);
        if (f.values.front() != f.values.back()) features.push_back(std::move(f));
    }

    Vector score = Vector::Constant(static_cast<Eigen::Index>(ns), base);
    Vector grad(static_cast<Eigen::Index>(ns));
    Vector hess = Vector::Ones(static_cast<Eigen::Index>(ns));
    std::vector<Stump> stumps;
    stumps.reserve(rounds);
    for (Index round = 0; round < rounds; ++round) {
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(ns); ++i) {
            if (probability) {
                const double p = logistic(score(i));
                grad(i) = ts(i) - p;
                hess(i) = std::max(p * (1.0 - p), 1e-12);
            } else {
                grad(i) = ts(i) - score(i);
            }
        }
        const double g_total = grad.sum();
        const double h_total = hess.sum();
        double best_gain = 0.0;
        Stump best;
        bool found = false;
        for (const auto& f : features) {
            double gl = 0.0;
            double hl = 0.0;
            for (Index r = 0; r + 1 < ns; ++r) {
                gl += grad(static_cast<Eigen::Index>(f.order[r]));
                hl += hess(static_cast<Eigen::Index>(f.order[r]));
                const Index left_count = r + 1;
                if (left_count < min_leaf || ns - left_count < min_leaf) continue;
                if (f.values[r] == f.values[r + 1]) continue;
                const double gr = g_total - gl;
                const double hr = h_total - hl;
                const double gain = gl * gl / hl + gr * gr / hr - g_total * g_total / h_total;
                if (gain > best_gain) {
                    best_gain = gain;
                    best.feature = f.column;
                    best.threshold = 0.5 * (f.values[r] + f.values[r + 1]);
                    best.left = gl / hl;
                    best.right = gr / hr;
                    found = true;
                }
            }
        }
        if (!found) break;
        best.left *= rate;
        best.right *= rate;
        if (probability) {
            best.left = std::clamp(best.left, -10.0, 10.0);
            best.right = std::clamp(best.right, -10.0, 10.0);
        }
        for (Index r = 0; r < ns; ++r) {
            score(static_cast<Eigen::Index>(r)) +=
                x(subset[r], static_cast<Eigen::Index>(best.feature)) <= best.threshold ? best.left : best.right;
        }
        stumps.push_back(best);
    }
    return std::make_shared<StumpEnsemble>(base, std::move(stumps), probability);
}

}  // namespace detail

/// Fits `spec` on the rows of x listed in subset. targets is indexed like the
/// rows of x (0/1 values for probability learners).
inline PredictorPtr fit_learner(const NuisanceLearnerSpec& spec, const Matrix& x, const Vector& targets,
                                std::span<const Index> subset, std::uint64_t seed,
                                TargetType target = TargetType::Regression) {
    detail::check_subset(subset, static_cast<Index>(x.rows()));
    if (!spec.supports(target))
        throw std::invalid_argument(std::string(to_string(spec.kind())) + " cannot fit " +
                                    (target == TargetType::Regression ? "regression" : "probability") + " targets");
    if (target == TargetType::Probability) detail::check_binary_subset(targets, subset);
    switch (spec.kind()) {
        case LearnerKind::LassoLinear: return detail::fit_penalized(spec, x, targets, subset, seed, false);
        case LearnerKind::LogisticLasso: return detail::fit_penalized(spec, x, targets, subset, seed, true);
        case LearnerKind::BoostedStumps:
            return detail::fit_stumps(spec, x, targets, subset, target == TargetType::Probability);
        case LearnerKind::Knn: {
            const Index k = std::min<Index>(static_cast<Index>(spec.get("k")), subset.size());
            return std::make_shared<KnnPredictor>(detail::gather_rows(x, subset), detail::gather(targets, subset), k,
                                                  target == TargetType::Probability);
        }
    }
    throw std::invalid_argument("unknown learner kind");
}

}  // namespace hetcate
