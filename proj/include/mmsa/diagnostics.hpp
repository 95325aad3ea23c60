#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "mmsa/error.hpp"
#include "mmsa/msa.hpp"

namespace mmsa {

struct RatePoint {
    std::size_t n = 0;
    double gap = 0.0;
    double standard_error = 0.0;
    /// gap > 5 standard errors.
    bool resolved = false;
};

enum class RateStatus { pass, fail, converged_before_window };

inline const char* to_string(RateStatus s) {
    switch (s) {
        case RateStatus::pass: return "pass";
        case RateStatus::fail: return "fail";
        case RateStatus::converged_before_window: return "converged-before-rate-window";
    }
    return "unknown";
}

struct RateReport {
    double j_star = 0.0;
    std::size_t n_min = 0, n_max = 0;
    /// Accepted iterations inside [n_min, n_max].
    std::vector<RatePoint> points;
    /// Over resolved points only. NaN when fewer than two are resolved.
    double slope = std::numeric_limits<double>::quiet_NaN();
    double sup_n_gap = 0.0;
    /// n * b_n at the first resolved point.
    double first_n_gap = 0.0;
    /// Smallest b_n / SE seen; the gap should not fall below -3 SE.
    double min_gap_z = std::numeric_limits<double>::infinity();
    RateStatus status = RateStatus::converged_before_window;

    bool passed() const { return status != RateStatus::fail; }
    std::size_t resolved_count() const {
        std::size_t c = 0;
        for (const auto& p : points) c += p.resolved;
        return c;
    }
};

inline constexpr double kRateNoiseFloor = 5.0;
inline constexpr double kRateSlopeThreshold = -0.8;

/// Rate check of b_n = J_n - j_star against C / n. Passes when the log-log
/// slope over resolved points is <= -0.8 or sup n b_n <= 2 n_1 b_{n_1}, with
/// n_1 the first resolved iteration.
inline RateReport rate_fit(const IterationTrace& trace, double j_star, std::size_t n_min,
                           std::size_t n_max) {
    if (n_min == 0 || n_max < n_min)
        throw InvalidArgument("rate_fit: need 1 <= n_min <= n_max");
    RateReport rep;
    rep.j_star = j_star;
    rep.n_min = n_min;
    rep.n_max = n_max;
    for (const auto& row : trace.rows) {
        if (row.n < n_min || row.n > n_max || !row.accepted) continue;
        RatePoint pt;
        pt.n = row.n;
        pt.gap = row.cost - j_star;
        pt.standard_error = row.cost_se;
        pt.resolved = pt.gap > kRateNoiseFloor * pt.standard_error;
        if (row.cost_se > 0.0) rep.min_gap_z = std::min(rep.min_gap_z, pt.gap / row.cost_se);
        rep.points.push_back(pt);
    }

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t m = 0;
    bool first = true;
    for (const auto& pt : rep.points) {
        if (!pt.resolved) continue;
        const double nb = static_cast<double>(pt.n) * pt.gap;
        if (first) {
            rep.first_n_gap = nb;
            first = false;
        }
        rep.sup_n_gap = std::max(rep.sup_n_gap, nb);
        const double lx = std::log(static_cast<double>(pt.n)), ly = std::log(pt.gap);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++m;
    }
    if (m == 0) {
        rep.status = RateStatus::converged_before_window;
        return rep;
    }
    if (m >= 2) {
        const double dm = static_cast<double>(m);
        const double denom = sxx - sx * sx / dm;
        if (denom > 0.0) rep.slope = (sxy - sx * sy / dm) / denom;
    }
    const bool slope_ok = !std::isnan(rep.slope) && rep.slope <= kRateSlopeThreshold;
    const bool sup_ok = rep.sup_n_gap <= 2.0 * rep.first_n_gap;
    rep.status = slope_ok || sup_ok ? RateStatus::pass : RateStatus::fail;
    return rep;
}

enum class SyntheticGap { inverse_n, inverse_log };

/// Noise-free trace with J_n = j_star + b_n for n = 1..n_max.
inline IterationTrace synthetic_trace(SyntheticGap kind, double j_star, std::size_t n_max) {
    IterationTrace t;
    for (std::size_t n = 1; n <= n_max; ++n) {
        const double dn = static_cast<double>(n);
        IterationRecord r;
        r.n = n;
        r.cost = j_star + (kind == SyntheticGap::inverse_n ? 1.0 / dn : 1.0 / std::log(dn + 1.0));
        t.rows.push_back(r);
    }
    return t;
}

struct RecursiveBoundResult {
    bool hypothesis_holds = true;
    bool bound_holds = true;
    /// 1-based index k of the first failure, hypothesis failures first.
    std::optional<std::size_t> first_violation;

    bool ok() const { return hypothesis_holds && bound_holds; }
};

/// seq[k-1] = b_k. Checks b_k >= 0 and b_{k+1} <= b_k - q b_k^2 for all k;
/// when that holds, checks k b_k <= max(b_1, 1/q). `rel_tol` absorbs rounding
/// in the product k b_k.
inline RecursiveBoundResult check_recursive_bound(const std::vector<double>& seq, double q,
                                                  double rel_tol = 1e-12) {
    if (seq.empty()) throw InvalidArgument("check_recursive_bound: empty sequence");
    if (!(q > 0.0)) throw InvalidArgument("check_recursive_bound: q must be positive");
    RecursiveBoundResult r;
    for (std::size_t k = 0; k < seq.size(); ++k) {
        const bool bad = !(seq[k] >= 0.0) ||
                         (k + 1 < seq.size() && !(seq[k + 1] <= seq[k] - q * seq[k] * seq[k]));
        if (bad) {
            r.hypothesis_holds = false;
            r.first_violation = k + 1;
            return r;
        }
    }
    const double bound = std::max(seq.front(), 1.0 / q) * (1.0 + rel_tol);
    for (std::size_t k = 0; k < seq.size(); ++k) {
        if (static_cast<double>(k + 1) * seq[k] > bound) {
            r.bound_holds = false;
            r.first_violation = k + 1;
            return r;
        }
    }
    return r;
}

namespace csv {

inline std::string format(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string format(std::size_t v) { return std::to_string(v); }

inline double parse_double(std::string_view s, const std::string& where) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw Error(where + ": cannot parse number '" + std::string(s) + "'");
    return v;
}

inline std::size_t parse_count(std::string_view s, const std::string& where) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw Error(where + ": cannot parse integer '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::vector<std::vector<std::string>> read_rows(const std::string& path,
                                                       std::string_view header) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(in, line) || line != header)
        throw Error(path + ": unexpected header, want '" + std::string(header) + "'");
    std::vector<std::vector<std::string>> rows;
    const std::size_t width = split(header).size();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != width)
            throw Error(path + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(width) + " fields");
        rows.emplace_back(cells.begin(), cells.end());
    }
    return rows;
}

inline void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << body;
    out.flush();
    if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace csv

inline constexpr std::string_view kTraceHeader = "n,J,J_se,mu,mu_se,rho,backtracks,accepted,wall_ms";
inline constexpr std::string_view kRateHeader = "n,b_n,n_times_bn";

inline std::string trace_csv(const IterationTrace& trace) {
    std::ostringstream os;
    os << kTraceHeader << '\n';
    for (const auto& r : trace.rows) {
        os << csv::format(r.n) << ',' << csv::format(r.cost) << ',' << csv::format(r.cost_se) << ','
           << csv::format(r.mu) << ',' << csv::format(r.mu_se) << ',' << csv::format(r.rho) << ','
           << csv::format(r.backtracks) << ',' << (r.accepted ? 1 : 0) << ','
           << csv::format(r.wall_ms) << '\n';
    }
    return os.str();
}

inline void export_csv(const IterationTrace& trace, const std::string& path) {
    csv::write_file(path, trace_csv(trace));
}

/// Columns outside the CSV schema (delta_cost, changed, probes) come back as 0.
inline IterationTrace read_trace_csv(const std::string& path) {
    IterationTrace t;
    for (const auto& c : csv::read_rows(path, kTraceHeader)) {
        IterationRecord r;
        r.n = csv::parse_count(c[0], path);
        r.cost = csv::parse_double(c[1], path);
        r.cost_se = csv::parse_double(c[2], path);
        r.mu = csv::parse_double(c[3], path);
        r.mu_se = csv::parse_double(c[4], path);
        r.rho = csv::parse_double(c[5], path);
        r.backtracks = csv::parse_count(c[6], path);
        if (c[7] != "0" && c[7] != "1") throw Error(path + ": accepted must be 0 or 1");
        r.accepted = c[7] == "1";
        r.wall_ms = csv::parse_double(c[8], path);
        t.rows.push_back(r);
    }
    return t;
}

inline std::string rate_csv(const RateReport& rep) {
    std::ostringstream os;
    os << kRateHeader << '\n';
    for (const auto& p : rep.points)
        os << csv::format(p.n) << ',' << csv::format(p.gap) << ','
           << csv::format(static_cast<double>(p.n) * p.gap) << '\n';
    return os.str();
}

inline void export_csv(const RateReport& rep, const std::string& path) {
    csv::write_file(path, rate_csv(rep));
}

struct RateRow {
    std::size_t n = 0;
    double gap = 0.0;
    double n_times_gap = 0.0;
};

inline std::vector<RateRow> read_rate_csv(const std::string& path) {
    std::vector<RateRow> out;
    for (const auto& c : csv::read_rows(path, kRateHeader))
        out.push_back({csv::parse_count(c[0], path), csv::parse_double(c[1], path),
                       csv::parse_double(c[2], path)});
    return out;
}

}  // namespace mmsa
