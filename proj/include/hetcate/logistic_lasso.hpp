#pragma once

// L1-penalized logistic regression,
//     mean_i { log(1 + exp(x_i'g)) - a_i x_i'g } + lambda * ||g_pen||_1 ,
// solved by proximal Newton: each outer step forms the IRLS quadratic model
// and minimizes it (plus the penalty) with coordinate descent, followed by a
// backtracking line search on the true penalized objective.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "hetcate/lasso.hpp"

namespace hetcate {

struct LogisticLassoFit {
    Vector coefficients;
    double lambda = 0.0;
    bool converged = false;
    double kkt_residual = 0.0;
    int newton_steps = 0;
    int sweeps = 0;
    std::vector<double> objective_trace;
};

inline double logistic(double u) {
    if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
    const double e = std::exp(u);
    return e / (1.0 + e);
}

/// log(1 + exp(u)) without overflow.
inline double log1p_exp(double u) { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }

namespace detail {

/// Coefficients with |g_j| beyond this are treated as diverging (separation).
inline constexpr double kLogisticCoefficientCap = 50.0;

inline double logistic_loss(const Vector& eta, const Vector& a) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) s += log1p_exp(eta(i)) - a(i) * eta(i);
    return s / static_cast<double>(eta.size());
}

inline double l1_norm(const Vector& g, const std::vector<char>& penalized) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < g.size(); ++j) {
        if (penalized[static_cast<std::size_t>(j)]) s += std::abs(g(j));
    }
    return s;
}

inline double logistic_kkt_residual(const Matrix& xs, const Vector& as, const Vector& g, double lambda,
                                    const std::vector<char>& penalized) {
    const Vector eta = xs * g;
    Vector resid(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) resid(i) = logistic(eta(i)) - as(i);
    const Vector grad = xs.transpose() * resid / static_cast<double>(xs.rows());
    double worst = 0.0;
    for (Eigen::Index j = 0; j < g.size(); ++j) {
        double v;
        if (!penalized[static_cast<std::size_t>(j)]) {
            v = std::abs(grad(j));
        } else if (g(j) == 0.0) {
            v = std::max(0.0, std::abs(grad(j)) - lambda);
        } else {
            v = std::abs(grad(j) + lambda * (g(j) > 0.0 ? 1.0 : -1.0));
        }
        worst = std::max(worst, v);
    }
    return worst;
}

inline bool column_is_constant_one(const Matrix& xs, Eigen::Index c) {
    if (c >= xs.cols()) return false;
    return (xs.col(c).array() == 1.0).all();
}

/// Proximal-Newton solve on already-gathered rows, warm-started from g.
inline LogisticLassoFit solve_logistic(const Matrix& xs, const Vector& as, double lambda,
                                       const std::vector<char>& penalized, Vector g, const SolverOptions& opt) {
    const Eigen::Index ns = xs.rows();
    const Eigen::Index d = xs.cols();
    const double inv_n = 1.0 / static_cast<double>(ns);
    LogisticLassoFit fit;
    fit.lambda = lambda;

    Vector eta = xs * g;
    double obj = logistic_loss(eta, as) + lambda * l1_norm(g, penalized);
    if (opt.track_objective) fit.objective_trace.push_back(obj);

    Vector w(ns);
    Vector r(ns);
    Vector xw(d);
    std::vector<Eigen::Index> active;
    constexpr int kMaxNewton = 100;
    // Inner solves start loose and tighten with the outer step size.
    double inner_tol = 1e-3;

    for (int step = 0; step < kMaxNewton && fit.sweeps < opt.max_sweeps; ++step) {
        for (Eigen::Index i = 0; i < ns; ++i) {
            const double p = logistic(eta(i));
            w(i) = std::max(p * (1.0 - p), 1e-10);
            r(i) = as(i) - p;  // = w_i (z_i - eta_i)
        }
        for (Eigen::Index j = 0; j < d; ++j) xw(j) = xs.col(j).cwiseAbs2().dot(w) * inv_n;

        const Vector g_old = g;
        const Vector eta_old = eta;

        auto update = [&](Eigen::Index j) {
            if (xw(j) <= 0.0) return 0.0;
            const double grad = xs.col(j).dot(r) * inv_n;
            const double z = grad + xw(j) * g(j);
            const double next = penalized[static_cast<std::size_t>(j)] ? soft_threshold(z, lambda) / xw(j) : z / xw(j);
            const double delta = next - g(j);
            if (delta != 0.0) {
                g(j) = next;
                r.noalias() -= delta * xs.col(j).cwiseProduct(w);
                eta.noalias() += delta * xs.col(j);
            }
            return std::abs(delta);
        };

        // Inner coordinate descent on the quadratic model.
        while (fit.sweeps < opt.max_sweeps) {
            double change = 0.0;
            for (Eigen::Index j = 0; j < d; ++j) change = std::max(change, update(j));
            ++fit.sweeps;
            if (change < inner_tol) break;
            active.clear();
            for (Eigen::Index j = 0; j < d; ++j) {
                if (g(j) != 0.0) active.push_back(j);
            }
            while (fit.sweeps < opt.max_sweeps) {
                double inner = 0.0;
                for (Eigen::Index j : active) inner = std::max(inner, update(j));
                ++fit.sweeps;
                if (inner < inner_tol) break;
            }
        }

        // Backtracking on the penalized objective along the Newton direction.
        const Vector dir = g - g_old;
        const Vector deta = eta - eta_old;
        double t = 1.0;
        double next_obj = logistic_loss(eta, as) + lambda * l1_norm(g, penalized);
        for (int halvings = 0; next_obj > obj + 1e-15 * std::abs(obj) && halvings < 40; ++halvings) {
            t *= 0.5;
            g = g_old + t * dir;
            eta = eta_old + t * deta;
            next_obj = logistic_loss(eta, as) + lambda * l1_norm(g, penalized);
        }
        if (next_obj > obj) {
            g = g_old;
            eta = eta_old;
            next_obj = obj;
        }
        ++fit.newton_steps;
        const double moved = (g - g_old).cwiseAbs().maxCoeff();
        obj = next_obj;
        if (opt.track_objective) fit.objective_trace.push_back(obj);

        if (g.cwiseAbs().maxCoeff() > kLogisticCoefficientCap) {
            // Separation: clamp to the cap and report non-convergence.
            g = g.cwiseMax(-kLogisticCoefficientCap).cwiseMin(kLogisticCoefficientCap);
            fit.coefficients = g;
            fit.converged = false;
            fit.kkt_residual = logistic_kkt_residual(xs, as, g, lambda, penalized);
            return fit;
        }
        if (moved < opt.tolerance && inner_tol <= 0.1 * opt.tolerance) {
            fit.converged = true;
            break;
        }
        inner_tol = std::max(0.1 * opt.tolerance, std::min(inner_tol, 0.01 * moved));
    }
    fit.coefficients = g;
    fit.kkt_residual = logistic_kkt_residual(xs, as, g, lambda, penalized);
    return fit;
}

inline void check_binary_subset(const Vector& a, std::span<const Index> subset) {
    bool has0 = false;
    bool has1 = false;
    for (Index i : subset) {
        const double v = a(static_cast<Eigen::Index>(i));
        if (v == 0.0) {
            has0 = true;
        } else if (v == 1.0) {
            has1 = true;
        } else {
            throw std::invalid_argument("propensity targets must be 0 or 1");
        }
    }
    if (!has0 || !has1) throw FitError("propensity fit requires both arms");
}

/// Intercept-only starting point when column 0 is the constant 1.
inline Vector logistic_start(const Matrix& xs, const Vector& as) {
    Vector g = Vector::Zero(xs.cols());
    if (column_is_constant_one(xs, 0)) {
        const double rate = as.mean();
        g(0) = std::log(rate / (1.0 - rate));
    }
    return g;
}

}  // namespace detail

/// Logistic lasso on the rows of x listed in subset; a holds 0/1 targets
/// indexed like the rows of x. Column 0 is never penalized.
inline LogisticLassoFit fit_logistic_lasso(const Matrix& x, const Vector& a, std::span<const Index> subset,
                                           double lambda, const SolverOptions& opt = {},
                                           const Vector* warm_start = nullptr) {
    detail::check_subset(subset, static_cast<Index>(x.rows()));
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    detail::check_binary_subset(a, subset);
    const Matrix xs = detail::gather_rows(x, subset);
    const Vector as = detail::gather(a, subset);
    const auto mask = detail::penalty_mask(static_cast<Index>(x.cols()), false);
    Vector start = warm_start ? *warm_start : detail::logistic_start(xs, as);
    return detail::solve_logistic(xs, as, lambda, mask, std::move(start), opt);
}

/// Logistic analogue of fit_lasso_along.
inline LogisticLassoFit fit_logistic_lasso_along(const Matrix& x, const Vector& a, std::span<const Index> subset,
                                                 std::span<const double> path, const SolverOptions& opt = {}) {
    detail::check_subset(subset, static_cast<Index>(x.rows()));
    if (path.empty()) throw std::invalid_argument("lambda path is empty");
    detail::check_binary_subset(a, subset);
    const Matrix xs = detail::gather_rows(x, subset);
    const Vector as = detail::gather(a, subset);
    const auto mask = detail::penalty_mask(static_cast<Index>(x.cols()), false);
    Vector g = detail::logistic_start(xs, as);
    LogisticLassoFit fit;
    for (double lambda : path) {
        fit = detail::solve_logistic(xs, as, lambda, mask, g, opt);
        g = fit.coefficients;
        if (!fit.converged) break;
    }
    return fit;
}

}  // namespace hetcate
