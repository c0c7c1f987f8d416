#pragma once

// L1-penalized least squares by cyclic coordinate descent with covariance
// updates.
//
// Public lambda follows the un-halved convention
//     mean_i (y_i - x_i'b)^2 + lambda * ||b_pen||_1 .
// Internally the solver minimizes the equivalent
//     (1/2) mean_i (y_i - x_i'b)^2 + (lambda/2) * ||b_pen||_1 ,
// so soft-thresholds, KKT residuals and objective traces are all reported in
// the halved convention. Column 0 is the intercept and is unpenalized unless
// penalize_intercept is set.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "hetcate/core_model.hpp"

namespace hetcate {

struct SolverOptions {
    int max_sweeps = 10000;
    /// Convergence when the largest coefficient change over a sweep falls below this.
    double tolerance = 1e-8;
    /// Record the penalized objective after every sweep (or Newton step).
    bool track_objective = false;
};

struct LassoFit {
    Vector coefficients;
    double lambda = 0.0;
    bool intercept_unpenalized = true;
    Index n_used = 0;
    bool converged = false;
    /// Max KKT violation of the halved objective at the returned point.
    double kkt_residual = 0.0;
    int sweeps = 0;
    std::vector<double> objective_trace;
};

inline double soft_threshold(double z, double t) {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

namespace detail {

inline Matrix gather_rows(const Matrix& x, std::span<const Index> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Eigen::Index>(r), c) = x(rows[r], c);
    }
    return out;
}

inline Vector gather(const Vector& v, std::span<const Index> rows) {
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Eigen::Index>(r)) = v(static_cast<Eigen::Index>(rows[r]));
    return out;
}

/// Sufficient statistics of a least-squares problem, all divided by the row count.
struct GramProblem {
    Matrix gram;  // X'X / rows
    Vector xty;   // X'y / rows
    double yty = 0.0;
    Index rows = 0;

    static GramProblem from_rows(const Matrix& xs, const Vector& ys) {
        GramProblem g;
        g.rows = static_cast<Index>(xs.rows());
        const double inv = 1.0 / static_cast<double>(xs.rows());
        g.gram = Matrix::Zero(xs.cols(), xs.cols());
        g.gram.selfadjointView<Eigen::Lower>().rankUpdate(xs.transpose(), inv);
        g.gram.triangularView<Eigen::StrictlyUpper>() = g.gram.transpose();
        g.xty = xs.transpose() * ys * inv;
        g.yty = ys.squaredNorm() * inv;
        return g;
    }

    /// Statistics of (this minus other), where other is a subset of this problem's rows.
    GramProblem without(const GramProblem& other) const {
        GramProblem g;
        g.rows = rows - other.rows;
        const double a = static_cast<double>(rows);
        const double b = static_cast<double>(other.rows);
        const double inv = 1.0 / (a - b);
        g.gram = (gram * a - other.gram * b) * inv;
        g.xty = (xty * a - other.xty * b) * inv;
        g.yty = (yty * a - other.yty * b) * inv;
        return g;
    }
};

struct CdOutcome {
    bool converged = false;
    int sweeps = 0;
};

inline double gram_objective(const GramProblem& p, const Vector& beta, const Vector& grad, double lambda_half,
                             const std::vector<char>& penalized) {
    // (1/2) b'Gb - c'b + yty/2 with grad = Gb - c  =>  b'Gb = b'(grad + c)
    const double quad = 0.5 * beta.dot(grad + p.xty) - p.xty.dot(beta) + 0.5 * p.yty;
    double pen = 0.0;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
        if (penalized[static_cast<std::size_t>(j)]) pen += std::abs(beta(j));
    }
    return quad + lambda_half * pen;
}

/// Cyclic coordinate descent on the halved objective, warm-started from beta.
/// Full sweeps alternate with sweeps restricted to the nonzero set; the solver
/// stops only after a full sweep moves no coefficient by more than tolerance.
inline CdOutcome solve_gram(const GramProblem& p, double lambda_half, const std::vector<char>& penalized,
                            Vector& beta, const SolverOptions& opt, std::vector<double>* trace) {
    const Eigen::Index d = p.gram.rows();
    Vector grad = p.gram * beta - p.xty;
    CdOutcome out;
    std::vector<Eigen::Index> active;
    active.reserve(static_cast<std::size_t>(d));

    auto update = [&](Eigen::Index j) {
        const double gjj = p.gram(j, j);
        double next = 0.0;
        if (gjj > 0.0) {
            const double z = gjj * beta(j) - grad(j);
            next = penalized[static_cast<std::size_t>(j)] ? soft_threshold(z, lambda_half) / gjj : z / gjj;
        }
        const double delta = next - beta(j);
        if (delta != 0.0) {
            beta(j) = next;
            grad.noalias() += delta * p.gram.col(j);
        }
        return std::abs(delta);
    };
    auto record = [&] {
        if (trace) trace->push_back(gram_objective(p, beta, grad, lambda_half, penalized));
    };

    while (out.sweeps < opt.max_sweeps) {
        double change = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) change = std::max(change, update(j));
        ++out.sweeps;
        record();
        if (change < opt.tolerance) {
            out.converged = true;
            break;
        }
        active.clear();
        for (Eigen::Index j = 0; j < d; ++j) {
            if (beta(j) != 0.0) active.push_back(j);
        }
        while (out.sweeps < opt.max_sweeps) {
            double inner = 0.0;
            for (Eigen::Index j : active) inner = std::max(inner, update(j));
            ++out.sweeps;
            record();
            if (inner < opt.tolerance) break;
        }
    }
    return out;
}

inline double gram_kkt_residual(const GramProblem& p, const Vector& beta, double lambda_half,
                                const std::vector<char>& penalized) {
    const Vector grad = p.gram * beta - p.xty;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
        double v;
        if (!penalized[static_cast<std::size_t>(j)]) {
            v = std::abs(grad(j));
        } else if (beta(j) == 0.0) {
            v = std::max(0.0, std::abs(grad(j)) - lambda_half);
        } else {
            v = std::abs(grad(j) + lambda_half * (beta(j) > 0.0 ? 1.0 : -1.0));
        }
        worst = std::max(worst, v);
    }
    return worst;
}

inline std::vector<char> penalty_mask(Index d, bool penalize_intercept) {
    std::vector<char> mask(d, 1);
    if (d > 0 && !penalize_intercept) mask[0] = 0;
    return mask;
}

inline void check_subset(std::span<const Index> subset, Index rows) {
    if (subset.empty()) throw std::invalid_argument("fit subset is empty");
    for (Index i : subset) {
        if (i >= rows) throw std::out_of_range("fit subset index out of range");
    }
}

}  // namespace detail

/// Lasso on the rows of x listed in subset. y is indexed like the rows of x.
inline LassoFit fit_lasso(const Matrix& x, const Vector& y, std::span<const Index> subset, double lambda,
                          bool penalize_intercept = false, const SolverOptions& opt = {},
                          const Vector* warm_start = nullptr) {
    detail::check_subset(subset, static_cast<Index>(x.rows()));
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    const auto problem = detail::GramProblem::from_rows(detail::gather_rows(x, subset), detail::gather(y, subset));
    const auto mask = detail::penalty_mask(static_cast<Index>(x.cols()), penalize_intercept);

    LassoFit fit;
    fit.lambda = lambda;
    fit.intercept_unpenalized = !penalize_intercept;
    fit.n_used = subset.size();
    fit.coefficients = warm_start ? *warm_start : Vector::Zero(x.cols());
    const auto res = detail::solve_gram(problem, 0.5 * lambda, mask, fit.coefficients, opt,
                                        opt.track_objective ? &fit.objective_trace : nullptr);
    fit.converged = res.converged;
    fit.sweeps = res.sweeps;
    fit.kkt_residual = detail::gram_kkt_residual(problem, fit.coefficients, 0.5 * lambda, mask);
    return fit;
}

/// Solves successively along a descending lambda path with warm starts and
/// returns the fit at the last value. Used to refit after CV selection.
inline LassoFit fit_lasso_along(const Matrix& x, const Vector& y, std::span<const Index> subset,
                                std::span<const double> path, const SolverOptions& opt = {}) {
    detail::check_subset(subset, static_cast<Index>(x.rows()));
    if (path.empty()) throw std::invalid_argument("lambda path is empty");
    const auto problem = detail::GramProblem::from_rows(detail::gather_rows(x, subset), detail::gather(y, subset));
    const auto mask = detail::penalty_mask(static_cast<Index>(x.cols()), false);
    LassoFit fit;
    fit.n_used = subset.size();
    fit.coefficients = Vector::Zero(x.cols());
    for (double lambda : path) {
        const auto res = detail::solve_gram(problem, 0.5 * lambda, mask, fit.coefficients, opt, nullptr);
        fit.converged = res.converged;
        fit.sweeps += res.sweeps;
        fit.lambda = lambda;
    }
    fit.kkt_residual = detail::gram_kkt_residual(problem, fit.coefficients, 0.5 * fit.lambda, mask);
    return fit;
}

}  // namespace hetcate
