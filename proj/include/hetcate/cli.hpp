#pragma once

// Command-line front end: estimate, simulate, study and validate.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 estimation
// failure, 4 unwritable output path.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hetcate/estimators.hpp"
#include "hetcate/io.hpp"
#include "hetcate/simulation.hpp"

namespace hetcate::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitEstimation = 3;
inline constexpr int kExitUnwritable = 4;

using json = nlohmann::json;

/// Parses "KIND" or "KIND:name=value,name=value".
inline NuisanceLearnerSpec parse_learner_spec(std::string_view text) {
    const auto colon = text.find(':');
    const std::string_view kind_text = text.substr(0, colon);
    const auto kind = parse_learner_kind(kind_text);
    if (!kind) {
        throw ValidationError("unknown learner \"" + std::string(kind_text) +
                              "\"; valid: LASSO_LINEAR, LOGISTIC_LASSO, BOOSTED_STUMPS, KNN");
    }
    std::map<std::string, double> params;
    if (colon != std::string_view::npos) {
        for (auto item : io::split(text.substr(colon + 1), ',')) {
            if (item.empty()) continue;
            const auto eq = item.find('=');
            double v = 0.0;
            if (eq == std::string_view::npos || !io::parse_double(item.substr(eq + 1), v)) {
                throw ValidationError("learner parameter must look like name=value, got \"" + std::string(item) + "\"");
            }
            params[std::string(item.substr(0, eq))] = v;
        }
    }
    try {
        return NuisanceLearnerSpec(*kind, std::move(params));
    } catch (const std::invalid_argument& e) {
        throw ValidationError(e.what());
    }
}

inline std::string format_learner_spec(const NuisanceLearnerSpec& s) {
    std::string out(to_string(s.kind()));
    char sep = ':';
    for (const auto& [name, value] : s.hyperparameters()) {
        out += sep + name + '=' + io::format_double(value);
        sep = ',';
    }
    return out;
}

/// Lambda policy applied to every lasso-family learner: a fixed value per
/// role, otherwise cross-validation over the configured grid.
struct LambdaPolicy {
    std::optional<double> mu;
    std::optional<double> pi;
    std::optional<double> cate;
    std::optional<double> cv_folds;
    std::optional<double> grid_size;
    std::optional<double> c_min;
    std::optional<double> c_max;
};

struct RunConfig {
    Estimand estimand = Estimand::Tth;
    Index k_folds = 3;
    std::optional<std::uint64_t> seed;
    double clip_epsilon = 0.01;
    double ci_level = 0.95;
    UnlabeledMode mode = UnlabeledMode::FullUnlabeled;
    std::optional<IndexSet> w_columns;
    std::optional<NuisanceLearnerSpec> mu_learner;
    std::optional<NuisanceLearnerSpec> pi_learner;
    std::optional<NuisanceLearnerSpec> cate_learner;
    LambdaPolicy lambda;
};

inline Estimand parse_estimand_or_throw(std::string_view s) {
    if (auto e = parse_estimand(s)) return *e;
    throw ValidationError("unknown estimand \"" + std::string(s) + "\"; valid: TTH, ETH_DIRECT, ETH_OW, ETH_SPOW");
}

inline UnlabeledMode parse_mode_or_throw(std::string_view s) {
    if (auto m = parse_mode(s)) return *m;
    throw ValidationError("unknown mode \"" + std::string(s) + "\"; valid: FULL_UNLABELED, COVARIATES_ONLY");
}

inline IndexSet parse_columns(std::string_view s) {
    IndexSet cols;
    for (auto item : io::split(s, ',')) {
        double v = 0.0;
        if (!io::parse_double(item, v) || v < 0.0 || v != std::floor(v)) {
            throw ValidationError("column list must hold non-negative integers, got \"" + std::string(item) + "\"");
        }
        cols.push_back(static_cast<Index>(v));
    }
    return cols;
}

namespace detail {

inline NuisanceLearnerSpec learner_from_json(const json& j) {
    if (j.is_string()) return parse_learner_spec(j.get<std::string>());
    if (!j.is_object() || !j.contains("kind")) throw ValidationError("learner must be a string or an object with \"kind\"");
    std::string text = j.at("kind").get<std::string>();
    if (j.contains("params")) {
        char sep = ':';
        for (const auto& [name, value] : j.at("params").items()) {
            text += sep + name + '=' + io::format_double(value.get<double>());
            sep = ',';
        }
    }
    return parse_learner_spec(text);
}

inline void apply_json(RunConfig& c, const json& j) {
    if (!j.is_object()) throw ValidationError("configuration must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        if (key == "estimand") {
            c.estimand = parse_estimand_or_throw(v.get<std::string>());
        } else if (key == "k_folds") {
            c.k_folds = v.get<Index>();
        } else if (key == "seed") {
            c.seed = v.get<std::uint64_t>();
        } else if (key == "clip_epsilon") {
            c.clip_epsilon = v.get<double>();
        } else if (key == "ci_level") {
            c.ci_level = v.get<double>();
        } else if (key == "mode") {
            c.mode = parse_mode_or_throw(v.get<std::string>());
        } else if (key == "w_columns") {
            c.w_columns = v.get<IndexSet>();
        } else if (key == "mu_learner") {
            c.mu_learner = learner_from_json(v);
        } else if (key == "pi_learner") {
            c.pi_learner = learner_from_json(v);
        } else if (key == "cate_learner") {
            c.cate_learner = learner_from_json(v);
        } else if (key == "lambda") {
            for (const auto& [lk, lv] : v.items()) {
                const double x = lv.get<double>();
                if (lk == "mu") c.lambda.mu = x;
                else if (lk == "pi") c.lambda.pi = x;
                else if (lk == "cate") c.lambda.cate = x;
                else if (lk == "cv_folds") c.lambda.cv_folds = x;
                else if (lk == "grid_size") c.lambda.grid_size = x;
                else if (lk == "c_min") c.lambda.c_min = x;
                else if (lk == "c_max") c.lambda.c_max = x;
                else throw ValidationError("unknown lambda setting \"" + lk + "\"");
            }
        } else {
            throw ValidationError("unknown configuration key \"" + key + "\"");
        }
    }
}

inline bool lasso_family(LearnerKind k) { return k == LearnerKind::LassoLinear || k == LearnerKind::LogisticLasso; }

inline NuisanceLearnerSpec with_lambda(const NuisanceLearnerSpec& spec, const LambdaPolicy& p, std::optional<double> fixed,
                                       const char* role) {
    if (!lasso_family(spec.kind())) {
        if (fixed) throw ValidationError(std::string("a fixed lambda for ") + role + " needs a lasso-family learner");
        return spec;
    }
    auto params = spec.hyperparameters();
    auto put = [&](const char* name, std::optional<double> v) {
        if (v && !params.count(name)) params[name] = *v;
    };
    if (fixed) params["lambda"] = *fixed;
    put("cv_folds", p.cv_folds);
    put("grid_size", p.grid_size);
    put("c_min", p.c_min);
    put("c_max", p.c_max);
    try {
        return NuisanceLearnerSpec(spec.kind(), std::move(params));
    } catch (const std::invalid_argument& e) {
        throw ValidationError(e.what());
    }
}

}  // namespace detail

inline RunConfig load_run_config(const std::filesystem::path& path) {
    RunConfig c;
    json j;
    try {
        j = json::parse(io::read_text(path));
        detail::apply_json(c, j);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return c;
}

/// Seed precedence: explicit value, then HETCATE_SEED, then 0.
inline std::uint64_t resolve_seed(std::optional<std::uint64_t> explicit_seed) {
    if (explicit_seed) return *explicit_seed;
    if (const char* env = std::getenv("HETCATE_SEED"); env && *env) {
        double v = 0.0;
        if (!io::parse_double(env, v) || v < 0.0 || v != std::floor(v)) {
            throw ValidationError("HETCATE_SEED must be a non-negative integer");
        }
        return static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10));
    }
    return 0;
}

/// Validated estimator settings with every learner resolved.
inline EstimatorConfig to_estimator_config(const RunConfig& c) {
    if (c.k_folds < 3) throw ValidationError("k_folds must be at least 3");
    if (!(c.clip_epsilon > 0.0 && c.clip_epsilon < 0.5)) throw ValidationError("clip_epsilon must lie in (0, 0.5)");
    if (!(c.ci_level > 0.0 && c.ci_level < 1.0)) throw ValidationError("ci_level must lie in (0, 1)");
    EstimatorConfig e;
    e.k_folds = c.k_folds;
    e.seed = resolve_seed(c.seed);
    e.clip_epsilon = c.clip_epsilon;
    e.ci_level = c.ci_level;
    e.mode = c.mode;
    EstimatorConfig probe = e;
    probe.mu_spec = c.mu_learner;
    probe.pi_spec = c.pi_learner;
    probe.cate_spec = c.cate_learner;
    CrossFitConfig defaults;
    try {
        defaults = resolve_crossfit_config(c.estimand, probe);
    } catch (const std::invalid_argument& ex) {
        throw ValidationError(ex.what());
    }
    if (!defaults.mu_spec.supports(TargetType::Regression)) throw ValidationError("mu learner cannot fit outcomes");
    if (!defaults.pi_spec.supports(TargetType::Probability)) throw ValidationError("pi learner cannot fit probabilities");
    if (!defaults.cate.spec.supports(TargetType::Regression)) throw ValidationError("cate learner cannot fit outcomes");
    e.mu_spec = detail::with_lambda(defaults.mu_spec, c.lambda, c.lambda.mu, "mu");
    e.pi_spec = detail::with_lambda(defaults.pi_spec, c.lambda, c.lambda.pi, "pi");
    e.cate_spec = detail::with_lambda(defaults.cate.spec, c.lambda, c.lambda.cate, "cate");
    return e;
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

inline constexpr std::string_view kStubEstimator = "STUB";

/// A study cell's estimator: one of the estimands, or STUB, which returns the
/// true value with standard error 0.1 (for exercising the harness).
inline StudyEstimator make_study_estimator(const std::string& name, const RunConfig& base, double truth) {
    if (name == kStubEstimator) {
        return [truth, level = base.ci_level](const SemiSupervisedDataset& ds, std::uint64_t) {
            EstimateReport r;
            r.point = truth;
            r.std_error = 0.1;
            r.ci_level = level;
            r.n = ds.n();
            r.m = ds.m();
            finalize_inference(r);
            return r;
        };
    }
    const auto estimand = parse_estimand(name);
    if (!estimand) {
        throw ValidationError("unknown estimator \"" + name + "\"; valid: TTH, ETH_DIRECT, ETH_OW, ETH_SPOW, STUB");
    }
    RunConfig c = base;
    c.estimand = *estimand;
    c.seed = 0;
    EstimatorConfig cfg = to_estimator_config(c);
    return [cfg, e = *estimand](const SemiSupervisedDataset& ds, std::uint64_t seed) {
        EstimatorConfig local = cfg;
        local.seed = seed;
        return estimate(e, ds, local);
    };
}

struct StudyConfig {
    std::vector<StudyCell> cells;
    Index reps = 200;
    std::uint64_t seed = 0;
    Index workers = 1;
};

/// Study file layout:
///   {"reps": 200, "seed": 1, "workers": 4, "defaults": {RunConfig keys},
///    "cells": [{"method": "...", "estimator": "TTH", "model": 1, "n": 1000,
///               "m": 5000, "config": {RunConfig keys}}]}
/// Per-cell "config" overrides "defaults". "truth" overrides the model value.
inline StudyConfig load_study_config(const std::filesystem::path& path) {
    StudyConfig s;
    try {
        const json j = json::parse(io::read_text(path));
        for (const auto& [key, v] : j.items()) {
            if (key != "reps" && key != "seed" && key != "workers" && key != "defaults" && key != "cells") {
                throw ValidationError("unknown study key \"" + key + "\"");
            }
        }
        s.reps = j.value("reps", Index{200});
        s.seed = j.value("seed", std::uint64_t{0});
        s.workers = j.value("workers", Index{1});
        RunConfig defaults;
        if (j.contains("defaults")) detail::apply_json(defaults, j.at("defaults"));
        if (!j.contains("cells") || !j.at("cells").is_array() || j.at("cells").empty()) {
            throw ValidationError("study needs a non-empty \"cells\" array");
        }
        for (const auto& cj : j.at("cells")) {
            RunConfig rc = defaults;
            if (cj.contains("config")) detail::apply_json(rc, cj.at("config"));
            const std::string est = cj.at("estimator").get<std::string>();
            DgpSpec dgp;
            dgp.model_id = cj.at("model").get<int>();
            dgp.n = cj.at("n").get<Index>();
            dgp.m = cj.value("m", Index{0});
            if (dgp.model_id < 1 || dgp.model_id > 4) throw ValidationError("model must be 1, 2, 3 or 4");
            const bool tth = est == "TTH" || est == kStubEstimator;
            const double truth = cj.contains("truth") ? cj.at("truth").get<double>()
                                                      : true_theta(dgp.model_id, tth ? TruthKind::Tth : TruthKind::EthLinearAllX);
            StudyCell cell;
            cell.method = cj.value("method", est);
            cell.dgp = dgp;
            cell.true_theta = truth;
            cell.estimator = make_study_estimator(est, rc, truth);
            s.cells.push_back(std::move(cell));
        }
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return s;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

namespace detail {

struct Flags {
    std::string config_path;
    std::string estimand;
    std::optional<Index> k_folds;
    std::optional<std::uint64_t> seed;
    std::string mode;
    std::optional<double> clip_eps;
    std::optional<double> ci_level;
    std::string w_cols;
    std::string mu_learner;
    std::string pi_learner;
    std::string cate_learner;
    LambdaPolicy lambda;
};

inline void add_run_flags(CLI::App* app, Flags& f) {
    app->add_option("--config", f.config_path, "JSON run configuration; flags override it");
    app->add_option("--estimand", f.estimand, "TTH, ETH_DIRECT, ETH_OW or ETH_SPOW");
    app->add_option("--k-folds", f.k_folds, "number of cross-fitting folds (>= 3)");
    app->add_option("--seed", f.seed, "base seed (default: $HETCATE_SEED, then 0)");
    app->add_option("--mode", f.mode, "FULL_UNLABELED or COVARIATES_ONLY");
    app->add_option("--clip-eps", f.clip_eps, "propensity clipping bound");
    app->add_option("--ci-level", f.ci_level, "confidence level");
    app->add_option("--w-cols", f.w_cols, "comma-separated working-model columns (ETH)");
    app->add_option("--mu-learner", f.mu_learner, "outcome learner, e.g. LASSO_LINEAR or BOOSTED_STUMPS:rounds=100");
    app->add_option("--pi-learner", f.pi_learner, "propensity learner");
    app->add_option("--cate-learner", f.cate_learner, "CATE learner");
    app->add_option("--lambda-mu", f.lambda.mu, "fixed lambda for the outcome lasso");
    app->add_option("--lambda-pi", f.lambda.pi, "fixed lambda for the propensity lasso");
    app->add_option("--lambda-cate", f.lambda.cate, "fixed lambda for the CATE lasso");
    app->add_option("--lambda-cv-folds", f.lambda.cv_folds, "cross-validation folds for lambda");
    app->add_option("--lambda-grid-size", f.lambda.grid_size, "lambda grid size");
    app->add_option("--lambda-c-min", f.lambda.c_min, "smallest grid multiplier");
    app->add_option("--lambda-c-max", f.lambda.c_max, "largest grid multiplier");
}

inline RunConfig run_config_from(const Flags& f) {
    RunConfig c;
    if (!f.config_path.empty()) c = load_run_config(f.config_path);
    if (!f.estimand.empty()) c.estimand = parse_estimand_or_throw(f.estimand);
    if (f.k_folds) c.k_folds = *f.k_folds;
    if (f.seed) c.seed = f.seed;
    if (!f.mode.empty()) c.mode = parse_mode_or_throw(f.mode);
    if (f.clip_eps) c.clip_epsilon = *f.clip_eps;
    if (f.ci_level) c.ci_level = *f.ci_level;
    if (!f.w_cols.empty()) c.w_columns = parse_columns(f.w_cols);
    if (!f.mu_learner.empty()) c.mu_learner = parse_learner_spec(f.mu_learner);
    if (!f.pi_learner.empty()) c.pi_learner = parse_learner_spec(f.pi_learner);
    if (!f.cate_learner.empty()) c.cate_learner = parse_learner_spec(f.cate_learner);
    auto take = [](std::optional<double>& dst, const std::optional<double>& src) {
        if (src) dst = src;
    };
    take(c.lambda.mu, f.lambda.mu);
    take(c.lambda.pi, f.lambda.pi);
    take(c.lambda.cate, f.lambda.cate);
    take(c.lambda.cv_folds, f.lambda.cv_folds);
    take(c.lambda.grid_size, f.lambda.grid_size);
    take(c.lambda.c_min, f.lambda.c_min);
    take(c.lambda.c_max, f.lambda.c_max);
    return c;
}

inline SemiSupervisedDataset load_checked(const std::string& labeled, const std::string& unlabeled, const RunConfig& c) {
    std::optional<std::filesystem::path> up;
    if (!unlabeled.empty()) up = unlabeled;
    auto ds = io::load_dataset(labeled, up, c.w_columns);
    if (c.mode == UnlabeledMode::FullUnlabeled && ds.m() > 0 && !ds.unlabeled_a) {
        throw ValidationError("unlabeled file has no column \"a\"; FULL_UNLABELED mode needs unlabeled treatments "
                              "(use --mode COVARIATES_ONLY)");
    }
    const auto report = validate_dataset(ds);
    if (!report.ok()) throw ValidationError(report.summary());
    return ds;
}

}  // namespace detail

/// Runs the CLI with the given arguments; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Semi-supervised estimation of treatment-effect heterogeneity"};
    app.require_subcommand(1);

    detail::Flags est_flags;
    std::string est_labeled, est_unlabeled, est_out;
    auto* est = app.add_subcommand("estimate", "estimate TTH or ETH from CSV files");
    est->add_option("--labeled", est_labeled, "labeled CSV (x0..x{d-1},a,y)")->required();
    est->add_option("--unlabeled", est_unlabeled, "unlabeled CSV (x0..x{d-1}[,a])");
    est->add_option("--out", est_out, "report path (default: standard output)");
    detail::add_run_flags(est, est_flags);

    int sim_model = 1;
    Index sim_n = 0, sim_m = 0;
    std::optional<std::uint64_t> sim_seed;
    std::string sim_out;
    auto* sim = app.add_subcommand("simulate", "write labeled.csv and unlabeled.csv from a simulation model");
    sim->add_option("--model", sim_model, "model id (1, 2, 3, or 4 for the constant-effect null)")->required()->check(CLI::Range(1, 4));
    sim->add_option("--n", sim_n, "labeled rows")->required();
    sim->add_option("--m", sim_m, "unlabeled rows");
    sim->add_option("--seed", sim_seed, "seed (default: $HETCATE_SEED, then 0)");
    sim->add_option("--out", sim_out, "output directory")->required();

    std::string study_config, study_out;
    std::optional<Index> study_workers, study_reps;
    auto* study = app.add_subcommand("study", "run a replicated simulation study");
    study->add_option("--config", study_config, "study JSON file")->required();
    study->add_option("--workers", study_workers, "worker threads (overrides the file)");
    study->add_option("--reps", study_reps, "replications per cell (overrides the file)");
    study->add_option("--out", study_out, "results table path (default: standard output)");

    detail::Flags val_flags;
    std::string val_labeled, val_unlabeled;
    auto* val = app.add_subcommand("validate", "check CSV files and configuration without estimating");
    val->add_option("--labeled", val_labeled, "labeled CSV")->required();
    val->add_option("--unlabeled", val_unlabeled, "unlabeled CSV");
    detail::add_run_flags(val, val_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    auto emit = [&](const std::string& path, const std::string& text) {
        if (path.empty()) {
            out << text;
        } else {
            io::write_text(path, text);
        }
    };

    try {
        if (*est) {
            const RunConfig rc = detail::run_config_from(est_flags);
            const EstimatorConfig cfg = to_estimator_config(rc);
            const auto ds = detail::load_checked(est_labeled, est_unlabeled, rc);
            const auto report = estimate(rc.estimand, ds, cfg);
            for (const auto& w : report.warnings) err << "warning: " << w << '\n';
            emit(est_out, io::format_report(report));
        } else if (*sim) {
            DgpSpec spec;
            spec.model_id = sim_model;
            spec.n = sim_n;
            spec.m = sim_m;
            spec.seed = resolve_seed(sim_seed);
            io::write_dataset(draw_dataset(spec), sim_out);
        } else if (*study) {
            StudyConfig sc = load_study_config(study_config);
            if (study_workers) sc.workers = *study_workers;
            if (study_reps) sc.reps = *study_reps;
            if (sc.reps < 2) throw ValidationError("a study needs at least 2 replications");
            if (sc.workers < 1) throw ValidationError("workers must be at least 1");
            const auto result = run_study(sc.cells, sc.reps, sc.seed, sc.workers);
            emit(study_out, io::format_study_table(result));
            bool failed = false;
            for (const auto& c : result.cells) {
                if (c.failures > 0) {
                    err << c.method << " (n=" << c.n << ", m=" << c.m << "): " << c.failures << " of "
                        << c.failures + c.n_reps << " replications failed";
                    if (!c.failure_messages.empty()) err << "; first: " << c.failure_messages.front();
                    err << '\n';
                }
                failed = failed || c.failed;
            }
            if (failed) {
                err << "error: at least one cell exceeded the 5% replication failure limit\n";
                return kExitEstimation;
            }
        } else if (*val) {
            const RunConfig rc = detail::run_config_from(val_flags);
            to_estimator_config(rc);
            const auto ds = detail::load_checked(val_labeled, val_unlabeled, rc);
            out << "ok: n=" << ds.n() << " m=" << ds.m() << " d=" << ds.d() << " p=" << ds.p() << '\n';
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const io::IoError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUnwritable;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitEstimation;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitEstimation;
    }
    return kExitOk;
}

}  // namespace hetcate::cli
