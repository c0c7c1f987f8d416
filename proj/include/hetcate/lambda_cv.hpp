#pragma once

// Cross-validated choice of the L1 penalty for the lasso and logistic lasso.
// Grids are lambda = c * sqrt(log d / rows) over a log-spaced set of c.

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "hetcate/lasso.hpp"
#include "hetcate/logistic_lasso.hpp"
#include "hetcate/rng.hpp"

namespace hetcate {

enum class PenalizedProblem { Lasso, Logistic };

struct LambdaGridOptions {
    Index size = 20;
    double c_min = 0.01;
    double c_max = 10.0;
};

/// Descending grid c_k * sqrt(log d / rows), c_k log-spaced on [c_min, c_max].
inline std::vector<double> default_lambda_grid(Index d, Index rows, const LambdaGridOptions& g = {}) {
    if (g.size == 0 || rows == 0) throw std::invalid_argument("lambda grid needs size >= 1 and rows >= 1");
    if (!(g.c_min > 0.0 && g.c_max >= g.c_min)) throw std::invalid_argument("lambda grid needs 0 < c_min <= c_max");
    const double rate = std::sqrt(std::log(static_cast<double>(std::max<Index>(d, 2))) / static_cast<double>(rows));
    std::vector<double> grid(g.size);
    for (Index k = 0; k < g.size; ++k) {
        const double t = g.size == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(g.size - 1);
        grid[k] = rate * g.c_max * std::pow(g.c_min / g.c_max, t);
    }
    return grid;
}

struct CvPath {
    std::vector<double> grid;
    std::vector<double> mean_loss;
    Index best = 0;
    double lambda() const { return grid[best]; }
};

namespace detail {

inline void check_grid(std::span<const double> grid) {
    if (grid.empty()) throw std::invalid_argument("lambda grid is empty");
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (!(grid[k] > 0.0)) throw std::invalid_argument("lambda grid must be strictly positive");
        if (k > 0 && grid[k] > grid[k - 1]) throw std::invalid_argument("lambda grid must be sorted descending");
    }
}

/// Shuffled assignment of subset positions to cv folds (sizes differ by at most 1).
inline std::vector<std::vector<Index>> cv_partition(Index count, Index folds, std::uint64_t seed) {
    std::vector<Index> order(count);
    for (Index i = 0; i < count; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(std::span<Index>(order));
    std::vector<std::vector<Index>> out(folds);
    for (Index i = 0; i < count; ++i) out[i % folds].push_back(order[i]);
    for (auto& f : out) std::sort(f.begin(), f.end());
    return out;
}

// Lowest mean loss wins; scanning from the largest lambda with a strict
// comparison breaks ties toward the larger lambda.
// A training fit explaining this fraction of the null deviance ends the path
// for every cv fold; smaller lambdas are not candidates.
inline constexpr double kSaturatedFit = 0.999;

inline void mark_saturated(std::vector<char>& saturated, std::size_t from) {
    for (std::size_t k = from; k < saturated.size(); ++k) saturated[k] = 1;
}

inline Index argmin_prefer_first(const std::vector<double>& loss) {
    Index best = 0;
    for (Index k = 1; k < loss.size(); ++k) {
        if (loss[k] < loss[best]) best = k;
    }
    return best;
}

inline CvPath cv_lasso(const Matrix& x, const Vector& y, std::span<const Index> subset,
                       const std::vector<std::vector<Index>>& parts, std::span<const double> grid) {
    const Matrix xs = gather_rows(x, subset);
    const Vector ys = gather(y, subset);
    const auto mask = penalty_mask(static_cast<Index>(x.cols()), false);
    const SolverOptions opt;

    std::vector<GramProblem> held;
    held.reserve(parts.size());
    GramProblem total;
    for (const auto& part : parts) {
        held.push_back(GramProblem::from_rows(gather_rows(xs, part), gather(ys, part)));
    }
    total.rows = 0;
    total.gram = Matrix::Zero(x.cols(), x.cols());
    total.xty = Vector::Zero(x.cols());
    for (const auto& h : held) {
        const double r = static_cast<double>(h.rows);
        total.gram += h.gram * r;
        total.xty += h.xty * r;
        total.yty += h.yty * r;
        total.rows += h.rows;
    }
    const double inv = 1.0 / static_cast<double>(total.rows);
    total.gram *= inv;
    total.xty *= inv;
    total.yty *= inv;

    CvPath path;
    path.grid.assign(grid.begin(), grid.end());
    path.mean_loss.assign(grid.size(), 0.0);
    std::vector<char> saturated(grid.size(), 0);
    for (std::size_t f = 0; f < parts.size(); ++f) {
        const GramProblem train = total.without(held[f]);
        const Matrix xv = gather_rows(xs, parts[f]);
        const Vector yv = gather(ys, parts[f]);
        Vector beta = Vector::Zero(x.cols());
        const double null_dev = train.yty - train.xty(0) * train.xty(0) / train.gram(0, 0);
        for (std::size_t k = 0; k < grid.size(); ++k) {
            if (saturated[k]) break;
            solve_gram(train, 0.5 * grid[k], mask, beta, opt, nullptr);
            path.mean_loss[k] += (yv - xv * beta).squaredNorm() / static_cast<double>(subset.size());
            const double rss = train.yty - 2.0 * beta.dot(train.xty) + beta.dot(train.gram * beta);
            if (rss <= (1.0 - kSaturatedFit) * null_dev) mark_saturated(saturated, k + 1);
        }
    }
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (saturated[k]) path.mean_loss[k] = std::numeric_limits<double>::infinity();
    }
    path.best = argmin_prefer_first(path.mean_loss);
    return path;
}

inline CvPath cv_logistic(const Matrix& x, const Vector& a, std::span<const Index> subset,
                          const std::vector<std::vector<Index>>& parts, std::span<const double> grid) {
    const Matrix xs = gather_rows(x, subset);
    const Vector as = gather(a, subset);
    const auto mask = penalty_mask(static_cast<Index>(x.cols()), false);
    const SolverOptions opt;

    CvPath path;
    path.grid.assign(grid.begin(), grid.end());
    path.mean_loss.assign(grid.size(), 0.0);
    std::vector<char> saturated(grid.size(), 0);
    for (std::size_t f = 0; f < parts.size(); ++f) {
        std::vector<Index> train;
        train.reserve(subset.size());
        std::size_t cursor = 0;
        for (Index i = 0; i < subset.size(); ++i) {
            if (cursor < parts[f].size() && parts[f][cursor] == i) {
                ++cursor;
            } else {
                train.push_back(i);
            }
        }
        check_binary_subset(as, train);
        const Matrix xt = gather_rows(xs, train);
        const Vector at = gather(as, train);
        const Matrix xv = gather_rows(xs, parts[f]);
        const Vector av = gather(as, parts[f]);
        Vector g = logistic_start(xt, at);
        const double null_dev = logistic_loss(xt.col(0) * g(0), at);
        for (std::size_t k = 0; k < grid.size(); ++k) {
            if (saturated[k]) break;
            const auto fit = solve_logistic(xt, at, grid[k], mask, g, opt);
            g = fit.coefficients;
            if (!fit.converged || logistic_loss(xt * g, at) <= (1.0 - kSaturatedFit) * null_dev) {
                mark_saturated(saturated, fit.converged ? k + 1 : k);
                if (!fit.converged) break;
            }
            const Vector eta = xv * g;
            // Deviance contribution: 2 * sum of negative log-likelihood terms.
            double dev = 0.0;
            for (Eigen::Index i = 0; i < eta.size(); ++i) dev += log1p_exp(eta(i)) - av(i) * eta(i);
            path.mean_loss[k] += 2.0 * dev / static_cast<double>(subset.size());
        }
    }
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (saturated[k]) path.mean_loss[k] = std::numeric_limits<double>::infinity();
    }
    path.best = argmin_prefer_first(path.mean_loss);
    return path;
}

}  // namespace detail

/// Full CV path (mean held-out loss per grid value) and the selected index.
/// Loss is squared error for the lasso and binomial deviance for the logistic
/// lasso. y_or_a is indexed like the rows of x.
inline CvPath cv_lambda_path(PenalizedProblem problem, const Matrix& x, const Vector& y_or_a,
                             std::span<const Index> subset, Index cv_folds, std::span<const double> grid,
                             std::uint64_t seed) {
    detail::check_grid(grid);
    detail::check_subset(subset, static_cast<Index>(x.rows()));
    if (cv_folds < 2) throw std::invalid_argument("cv_folds must be >= 2");
    if (subset.size() < cv_folds) throw std::invalid_argument("subset smaller than cv_folds");
    if (grid.size() == 1) {
        CvPath path;
        path.grid.assign(grid.begin(), grid.end());
        path.mean_loss.assign(1, 0.0);
        return path;
    }
    const auto parts = detail::cv_partition(subset.size(), cv_folds, seed);
    return problem == PenalizedProblem::Lasso ? detail::cv_lasso(x, y_or_a, subset, parts, grid)
                                              : detail::cv_logistic(x, y_or_a, subset, parts, grid);
}

inline double select_lambda_cv(PenalizedProblem problem, const Matrix& x, const Vector& y_or_a,
                               std::span<const Index> subset, Index cv_folds, std::span<const double> grid,
                               std::uint64_t seed) {
    return cv_lambda_path(problem, x, y_or_a, subset, cv_folds, grid, seed).lambda();
}

}  // namespace hetcate
