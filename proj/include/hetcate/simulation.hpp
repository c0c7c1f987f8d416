#pragma once

// Data-generating processes and the replication driver for simulation
// studies.
//
// X has d i.i.d. N(0,1) columns with an intercept column prepended, so
// Gaussian covariate X_j lives in column j. Labeled rows come first; rows
// are drawn labeled-first so the labeled sample for a given seed does not
// depend on m.
//
//   Model 1 (d = 200): A ~ Bern(phi(0.3 X1 + 0.5 X4)),
//                      Y = sum_{j<=20} X_j / sqrt(20) + A (X1 + X2 + X3) + e
//   Model 2 (d = 200): A ~ Bern(phi(0.2 X3^2)),  Y = 0.5 X3^2 + A (X1 + X2 + X3) + e
//   Model 3 (d = 10):  A ~ Bern(phi(0.2 X3^2)),  Y = 0.5 X3^2 + A (X2 + 0.5 X3^2) + e
//   Model 4 (d = 200): Model 1 with constant effect, Y = sum_{j<=20} X_j / sqrt(20) + 2 A + e
//
// with e ~ N(0, 0.1^2).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "hetcate/core_model.hpp"
#include "hetcate/logistic_lasso.hpp"
#include "hetcate/rng.hpp"

namespace hetcate {

struct DgpSpec {
    int model_id = 1;
    Index n = 1000;
    Index m = 0;
    std::uint64_t seed = 0;
    double noise_sd = 0.1;
    /// Overrides the Bernoulli treatment draw when set.
    std::optional<int> force_treatment;

    /// Number of Gaussian covariates (the design has one more column).
    Index gaussian_dims() const {
        switch (model_id) {
            case 1:
            case 2:
            case 4: return 200;
            case 3: return 10;
        }
        throw std::invalid_argument("model_id must be 1, 2, 3 or 4");
    }
};

namespace dgp {

/// Propensity P(A = 1 | x); x is a design row with x[0] = 1.
template <class Row>
double propensity(int model, const Row& x) {
    switch (model) {
        case 1:
        case 4: return logistic(0.3 * x[1] + 0.5 * x[4]);
        case 2:
        case 3: return logistic(0.2 * x[3] * x[3]);
    }
    throw std::invalid_argument("unknown model");
}

template <class Row>
double cate(int model, const Row& x) {
    switch (model) {
        case 1:
        case 2: return x[1] + x[2] + x[3];
        case 3: return x[2] + 0.5 * x[3] * x[3];
        case 4: return 2.0;
    }
    throw std::invalid_argument("unknown model");
}

/// E[Y | X = x, A = a].
template <class Row>
double outcome_mean(int model, const Row& x, int a) {
    double base = 0.0;
    switch (model) {
        case 1:
        case 4:
            for (int j = 1; j <= 20; ++j) base += x[j];
            base /= std::sqrt(20.0);
            break;
        case 2:
        case 3: base = 0.5 * x[3] * x[3]; break;
        default: throw std::invalid_argument("unknown model");
    }
    return base + (a == 1 ? cate(model, x) : 0.0);
}

}  // namespace dgp

inline SemiSupervisedDataset draw_dataset(const DgpSpec& spec) {
    const Index d = spec.gaussian_dims() + 1;
    const Index n = spec.n;
    const Index m = spec.m;
    Rng rng(spec.seed);
    SemiSupervisedDataset ds;
    ds.labeled_x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    ds.labeled_a.resize(n);
    ds.labeled_y.resize(static_cast<Eigen::Index>(n));
    ds.unlabeled_x.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    ds.unlabeled_a = std::vector<int>(m);
    ds.w_columns.resize(d);
    for (Index j = 0; j < d; ++j) ds.w_columns[j] = j;

    std::vector<double> row(d);
    auto draw_row = [&] {
        row[0] = 1.0;
        for (Index j = 1; j < d; ++j) row[j] = rng.normal();
        const double p = dgp::propensity(spec.model_id, row);
        const bool treated = rng.bernoulli(p);
        return spec.force_treatment ? *spec.force_treatment : (treated ? 1 : 0);
    };
    for (Index i = 0; i < n; ++i) {
        const int a = draw_row();
        const double noise = rng.normal();
        for (Index j = 0; j < d; ++j) ds.labeled_x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
        ds.labeled_a[i] = a;
        ds.labeled_y(static_cast<Eigen::Index>(i)) = dgp::outcome_mean(spec.model_id, row, a) + spec.noise_sd * noise;
    }
    for (Index i = 0; i < m; ++i) {
        const int a = draw_row();
        for (Index j = 0; j < d; ++j) ds.unlabeled_x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
        (*ds.unlabeled_a)[i] = a;
    }
    return ds;
}

enum class TruthKind { Tth, EthLinearAllX };

/// Population heterogeneity. Models 1-2 have a linear CATE, so TTH = ETH = 3.
/// Model 3: Var(X2 + 0.5 X3^2) = 1 + 0.25 * 2 = 1.5; its best linear predictor
/// in (1, X) is 0.5 + X2, so ETH = 1. Model 4 has no heterogeneity.
inline double true_theta(int model_id, TruthKind kind) {
    switch (model_id) {
        case 1:
        case 2: return 3.0;
        case 3: return kind == TruthKind::Tth ? 1.5 : 1.0;
        case 4: return 0.0;
    }
    throw std::invalid_argument("model_id must be 1, 2, 3 or 4");
}

// ---------------------------------------------------------------------------
// Replication driver
// ---------------------------------------------------------------------------

using StudyEstimator = std::function<EstimateReport(const SemiSupervisedDataset&, std::uint64_t seed)>;

struct StudyCell {
    std::string method;
    DgpSpec dgp;  // dgp.seed is ignored; replications derive their own
    StudyEstimator estimator;
    double true_theta = 0.0;
};

struct CellMetrics {
    std::string method;
    Index n = 0;
    Index m = 0;
    double true_theta = 0.0;
    double bias = 0.0;
    double emp_se = 0.0;
    double ase = 0.0;
    double rmse = 0.0;
    double coverage = 0.0;
    double ci_length = 0.0;
    Index n_reps = 0;
    Index failures = 0;
    bool failed = false;
    double rejection_rate = 0.0;  // fraction of one-sided p-values below 0.05
    std::vector<double> estimates;
    std::vector<std::string> failure_messages;
};

struct StudyResult {
    std::vector<CellMetrics> cells;
};

/// Replication r of cell c uses seed derive_seed(base_seed, {c, r}); the data
/// and the estimator take independent children of it.
inline std::uint64_t replication_seed(std::uint64_t base_seed, Index cell, Index rep) {
    return derive_seed(base_seed, {cell, rep});
}

/// Metrics from per-replication reports; failed replications are absent.
inline CellMetrics summarize_cell(const std::string& method, Index n, Index m, double theta,
                                  const std::vector<EstimateReport>& reports, Index failures) {
    CellMetrics c;
    c.method = method;
    c.n = n;
    c.m = m;
    c.true_theta = theta;
    c.n_reps = reports.size();
    c.failures = failures;
    const Index total = reports.size() + failures;
    c.failed = total == 0 || static_cast<double>(failures) > 0.05 * static_cast<double>(total);
    if (reports.empty()) return c;
    const double r = static_cast<double>(reports.size());
    double mean = 0.0;
    double sq_err = 0.0;
    double covered = 0.0;
    double rejected = 0.0;
    for (const auto& rep : reports) {
        c.estimates.push_back(rep.point);
        mean += rep.point;
        sq_err += (rep.point - theta) * (rep.point - theta);
        c.ase += rep.std_error;
        c.ci_length += rep.ci_upper - rep.ci_lower;
        if (rep.ci_lower <= theta && theta <= rep.ci_upper) covered += 1.0;
        if (rep.p_value_one_sided < 0.05) rejected += 1.0;
    }
    mean /= r;
    double var = 0.0;
    for (const auto& rep : reports) var += (rep.point - mean) * (rep.point - mean);
    c.bias = mean - theta;
    c.emp_se = reports.size() > 1 ? std::sqrt(var / (r - 1.0)) : 0.0;
    c.ase /= r;
    c.rmse = std::sqrt(sq_err / r);
    c.coverage = covered / r;
    c.ci_length /= r;
    c.rejection_rate = rejected / r;
    return c;
}

/// Runs every cell for n_reps replications on `parallelism` worker threads.
/// Output does not depend on the number of workers.
inline StudyResult run_study(const std::vector<StudyCell>& grid, Index n_reps, std::uint64_t base_seed,
                             Index parallelism = 1) {
    if (n_reps < 2) throw std::invalid_argument("run_study requires n_reps >= 2");
    const Index cells = grid.size();
    const Index jobs = cells * n_reps;
    std::vector<std::optional<EstimateReport>> results(jobs);
    std::vector<std::string> errors(jobs);
    std::atomic<Index> next{0};

    auto worker = [&] {
        for (Index job = next.fetch_add(1); job < jobs; job = next.fetch_add(1)) {
            const Index c = job / n_reps;
            const Index r = job % n_reps;
            const std::uint64_t seed = replication_seed(base_seed, c, r);
            try {
                DgpSpec spec = grid[c].dgp;
                spec.seed = derive_seed(seed, {0});
                const auto ds = draw_dataset(spec);
                results[job] = grid[c].estimator(ds, derive_seed(seed, {1}));
            } catch (const std::exception& e) {
                errors[job] = e.what();
            }
        }
    };
    const Index threads = std::max<Index>(1, std::min(parallelism, jobs));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (Index t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    StudyResult out;
    for (Index c = 0; c < cells; ++c) {
        std::vector<EstimateReport> ok;
        std::vector<std::string> failed;
        for (Index r = 0; r < n_reps; ++r) {
            const Index job = c * n_reps + r;
            if (results[job]) {
                ok.push_back(*results[job]);
            } else {
                failed.push_back(errors[job]);
            }
        }
        auto metrics = summarize_cell(grid[c].method, grid[c].dgp.n, grid[c].dgp.m, grid[c].true_theta, ok, failed.size());
        metrics.failure_messages = std::move(failed);
        out.cells.push_back(std::move(metrics));
    }
    return out;
}

}  // namespace hetcate
