#pragma once

// File formats: dataset CSVs, key=value estimate reports and study tables.
//
// Labeled file columns:   x0,...,x{d-1},a,y
// Unlabeled file columns: x0,...,x{d-1}[,a]
// x0 is the intercept column and must be constant 1. Numbers are written in
// the shortest form that parses back to the same double.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "hetcate/core_model.hpp"
#include "hetcate/simulation.hpp"

namespace hetcate::io {

class IoError : public Error {
public:
    using Error::Error;
};

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    /// Position of a header name, or -1.
    long column(std::string_view name) const {
        for (std::size_t j = 0; j < header.size(); ++j) {
            if (header[j] == name) return static_cast<long>(j);
        }
        return -1;
    }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path.string() + ": missing header row");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    for (auto f : split(line, ',')) {
        while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
        while (!f.empty() && f.back() == ' ') f.remove_suffix(1);
        t.header.emplace_back(f);
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != t.header.size()) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                  std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
        }
        std::vector<double> row(fields.size());
        for (std::size_t j = 0; j < fields.size(); ++j) {
            if (!parse_double(fields[j], row[j])) {
                throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": column \"" + t.header[j] +
                                      "\" is not a number: '" + std::string(fields[j]) + "'");
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

namespace detail {

/// Number of leading x0, x1, ... columns; they must come first and in order.
inline Index covariate_count(const CsvTable& t, const std::string& file) {
    Index d = 0;
    while (d < t.header.size() && t.header[d] == "x" + std::to_string(d)) ++d;
    if (d == 0) throw ValidationError(file + " is missing column \"x0\"");
    return d;
}

inline int binary_value(double v, const std::string& file, std::size_t row) {
    if (v == 0.0) return 0;
    if (v == 1.0) return 1;
    throw ValidationError(file + ": column \"a\" must be 0 or 1 (data row " + std::to_string(row + 1) + ")");
}

}  // namespace detail

/// Loads a dataset; W defaults to every column. Header mistakes and malformed values raise ValidationError;
/// content checks (intercept, arms, finiteness) are left to validate_dataset.
inline SemiSupervisedDataset load_dataset(const std::filesystem::path& labeled_path,
                                          const std::optional<std::filesystem::path>& unlabeled_path,
                                          const std::optional<IndexSet>& w_columns = std::nullopt) {
    const std::string lname = "labeled file";
    const CsvTable lab = read_csv(labeled_path);
    const Index d = detail::covariate_count(lab, lname);
    for (const char* col : {"a", "y"}) {
        if (lab.column(col) < 0) throw ValidationError(lname + " is missing column \"" + std::string(col) + "\"");
    }
    if (lab.header.size() != d + 2) {
        throw ValidationError(lname + ": expected columns x0..x" + std::to_string(d - 1) + ",a,y");
    }
    const auto ja = static_cast<std::size_t>(lab.column("a"));
    const auto jy = static_cast<std::size_t>(lab.column("y"));

    SemiSupervisedDataset ds;
    const auto n = static_cast<Eigen::Index>(lab.rows.size());
    ds.labeled_x.resize(n, static_cast<Eigen::Index>(d));
    ds.labeled_y.resize(n);
    ds.labeled_a.resize(lab.rows.size());
    for (std::size_t i = 0; i < lab.rows.size(); ++i) {
        for (Index j = 0; j < d; ++j) ds.labeled_x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = lab.rows[i][j];
        ds.labeled_a[i] = detail::binary_value(lab.rows[i][ja], lname, i);
        ds.labeled_y(static_cast<Eigen::Index>(i)) = lab.rows[i][jy];
    }

    ds.unlabeled_x.resize(0, static_cast<Eigen::Index>(d));
    if (unlabeled_path) {
        const std::string uname = "unlabeled file";
        const CsvTable unl = read_csv(*unlabeled_path);
        const Index du = detail::covariate_count(unl, uname);
        if (du != d) {
            throw ValidationError("unlabeled file has " + std::to_string(du) + " covariate columns, labeled file has " +
                                  std::to_string(d));
        }
        const long ua = unl.column("a");
        if (unl.header.size() != d + (ua >= 0 ? 1 : 0)) {
            throw ValidationError(uname + ": expected columns x0..x" + std::to_string(d - 1) + " and optionally a");
        }
        const auto m = static_cast<Eigen::Index>(unl.rows.size());
        ds.unlabeled_x.resize(m, static_cast<Eigen::Index>(d));
        if (ua >= 0) ds.unlabeled_a = std::vector<int>(unl.rows.size());
        for (std::size_t i = 0; i < unl.rows.size(); ++i) {
            for (Index j = 0; j < d; ++j) ds.unlabeled_x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = unl.rows[i][j];
            if (ua >= 0) (*ds.unlabeled_a)[i] = detail::binary_value(unl.rows[i][static_cast<std::size_t>(ua)], uname, i);
        }
    } else {
        ds.unlabeled_a = std::vector<int>{};
    }
    if (w_columns) {
        ds.w_columns = *w_columns;
    } else {
        ds.w_columns.resize(d);
        for (Index j = 0; j < d; ++j) ds.w_columns[j] = j;
    }
    return ds;
}

namespace detail {

inline std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

inline void write_rows(std::ostream& out, const Matrix& x, const std::vector<int>* a, const Vector* y) {
    std::string line;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        line.clear();
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (j > 0) line += ',';
            line += format_double(x(i, j));
        }
        if (a) line += ',' + std::to_string((*a)[static_cast<std::size_t>(i)]);
        if (y) line += ',' + format_double((*y)(i));
        line += '\n';
        out << line;
    }
}

inline std::string x_header(Eigen::Index d) {
    std::string h;
    for (Eigen::Index j = 0; j < d; ++j) h += (j > 0 ? ",x" : "x") + std::to_string(j);
    return h;
}

}  // namespace detail

/// Writes labeled.csv and unlabeled.csv into dir (created if needed).
inline void write_dataset(const SemiSupervisedDataset& ds, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    {
        auto out = detail::open_for_write(dir / "labeled.csv");
        out << detail::x_header(ds.labeled_x.cols()) << ",a,y\n";
        detail::write_rows(out, ds.labeled_x, &ds.labeled_a, &ds.labeled_y);
        if (!out) throw IoError("write failed for " + (dir / "labeled.csv").string());
    }
    auto out = detail::open_for_write(dir / "unlabeled.csv");
    out << detail::x_header(ds.labeled_x.cols()) << (ds.unlabeled_a ? ",a\n" : "\n");
    detail::write_rows(out, ds.unlabeled_x, ds.unlabeled_a ? &*ds.unlabeled_a : nullptr, nullptr);
    if (!out) throw IoError("write failed for " + (dir / "unlabeled.csv").string());
}

// ---------------------------------------------------------------------------
// Estimate reports
// ---------------------------------------------------------------------------

namespace detail {

inline std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '\\') {
            out += "\\\\";
        } else if (c == '\n') {
            out += "\\n";
        } else {
            out += c;
        }
    }
    return out;
}

inline std::string unescape(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            out += s[i + 1] == 'n' ? '\n' : s[i + 1];
            ++i;
        } else {
            out += s[i];
        }
    }
    return out;
}

}  // namespace detail

/// One key=value pair per line; fold and warning keys are 1-based.
inline std::string format_report(const EstimateReport& r) {
    std::ostringstream o;
    auto kv = [&](const std::string& key, const std::string& value) { o << key << '=' << value << '\n'; };
    kv("estimand", std::string(to_string(r.estimand)));
    kv("point", format_double(r.point));
    kv("std_error", format_double(r.std_error));
    kv("ci_level", format_double(r.ci_level));
    kv("ci_lower", format_double(r.ci_lower));
    kv("ci_upper", format_double(r.ci_upper));
    kv("p_one_sided", format_double(r.p_value_one_sided));
    kv("ate_hat", format_double(r.ate_hat));
    kv("n", std::to_string(r.n));
    kv("m", std::to_string(r.m));
    kv("k_folds", std::to_string(r.k_folds));
    kv("folds", std::to_string(r.diagnostics.size()));
    for (std::size_t k = 0; k < r.diagnostics.size(); ++k) {
        const auto& f = r.diagnostics[k];
        const std::string p = "fold." + std::to_string(k + 1) + ".";
        kv(p + "index", std::to_string(f.fold + 1));
        kv(p + "a_hat", format_double(f.a_hat));
        kv(p + "b_hat", format_double(f.b_hat));
        kv(p + "c_hat", format_double(f.c_hat));
        kv(p + "q_hat", format_double(f.q_hat));
        kv(p + "omega_l", format_double(f.omega_l));
        kv(p + "omega_u", format_double(f.omega_u));
        kv(p + "degenerate", f.degenerate ? "1" : "0");
    }
    kv("warnings", std::to_string(r.warnings.size()));
    for (std::size_t k = 0; k < r.warnings.size(); ++k) kv("warning." + std::to_string(k + 1), detail::escape(r.warnings[k]));
    return o.str();
}

inline EstimateReport parse_report(std::string_view text) {
    std::map<std::string, std::string, std::less<>> kv;
    std::size_t lineno = 0;
    for (auto line : split(text, '\n')) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ValidationError("report line " + std::to_string(lineno) + " has no '='");
        kv.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    }
    auto text_of = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) throw ValidationError("report is missing key \"" + key + "\"");
        return it->second;
    };
    auto real = [&](const std::string& key) {
        double v = 0.0;
        if (!parse_double(text_of(key), v)) throw ValidationError("report key \"" + key + "\" is not a number");
        return v;
    };
    auto count = [&](const std::string& key) {
        const double v = real(key);
        if (!(v >= 0.0) || v != std::floor(v)) throw ValidationError("report key \"" + key + "\" is not a count");
        return static_cast<Index>(v);
    };

    EstimateReport r;
    const auto e = parse_estimand(text_of("estimand"));
    if (!e) throw ValidationError("report has unknown estimand \"" + text_of("estimand") + "\"");
    r.estimand = *e;
    r.point = real("point");
    r.std_error = real("std_error");
    r.ci_level = real("ci_level");
    r.ci_lower = real("ci_lower");
    r.ci_upper = real("ci_upper");
    r.p_value_one_sided = real("p_one_sided");
    r.ate_hat = real("ate_hat");
    r.n = count("n");
    r.m = count("m");
    r.k_folds = count("k_folds");
    const Index folds = count("folds");
    for (Index k = 0; k < folds; ++k) {
        const std::string p = "fold." + std::to_string(k + 1) + ".";
        FoldDiagnostics f;
        f.fold = count(p + "index") - 1;
        f.a_hat = real(p + "a_hat");
        f.b_hat = real(p + "b_hat");
        f.c_hat = real(p + "c_hat");
        f.q_hat = real(p + "q_hat");
        f.omega_l = real(p + "omega_l");
        f.omega_u = real(p + "omega_u");
        f.degenerate = count(p + "degenerate") != 0;
        r.diagnostics.push_back(f);
    }
    const Index warnings = count("warnings");
    for (Index k = 0; k < warnings; ++k) r.warnings.push_back(detail::unescape(text_of("warning." + std::to_string(k + 1))));
    return r;
}

// ---------------------------------------------------------------------------
// Study tables
// ---------------------------------------------------------------------------

inline constexpr std::string_view kStudyHeader = "Method,n,m,Bias,Emp SE,ASE,RMSE,AC,Length";

/// CSV with one row per cell. Cells without any successful replication print NA.
inline std::string format_study_table(const StudyResult& result) {
    std::string out(kStudyHeader);
    out += '\n';
    for (const auto& c : result.cells) {
        auto num = [&](double v) { return c.n_reps == 0 ? std::string("NA") : format_double(v); };
        out += c.method + ',' + std::to_string(c.n) + ',' + std::to_string(c.m) + ',' + num(c.bias) + ',' + num(c.emp_se) +
               ',' + num(c.ase) + ',' + num(c.rmse) + ',' + num(c.coverage) + ',' + num(c.ci_length) + '\n';
    }
    return out;
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    auto out = detail::open_for_write(path);
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace hetcate::io
