#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmsa/config.hpp"
#include "mmsa/criteria.hpp"
#include "mmsa/diagnostics.hpp"
#include "mmsa/msa.hpp"
#include "mmsa/oracle.hpp"

namespace mmsa::cli {

enum ExitCode : int { ok = 0, usage_error = 1, descent_failure = 2, check_failed = 3 };

struct Options {
    std::string config_path;
    std::optional<std::string> out_dir;
    unsigned workers = 1;
    std::optional<std::uint64_t> seed;
};

/// `mmsa: status=<s> command=<c> k=v ...` on one line; values with spaces are quoted.
class Status {
public:
    Status(std::string command, std::string status)
        : command_(std::move(command)), status_(std::move(status)) {}

    Status& add(const std::string& key, const std::string& value) {
        fields_.emplace_back(key, value);
        return *this;
    }
    Status& add(const std::string& key, double value) { return add(key, csv::format(value)); }
    Status& add(const std::string& key, std::size_t value) { return add(key, std::to_string(value)); }

    std::string line() const {
        std::ostringstream os;
        os << "mmsa: status=" << status_ << " command=" << command_;
        for (const auto& [k, v] : fields_) {
            os << ' ' << k << '=';
            if (v.find_first_of(" \"=") == std::string::npos && !v.empty()) {
                os << v;
            } else {
                os << '"';
                for (char ch : v) {
                    if (ch == '"' || ch == '\\') os << '\\';
                    os << (ch == '\n' ? ' ' : ch);
                }
                os << '"';
            }
        }
        return os.str();
    }

private:
    std::string command_, status_;
    std::vector<std::pair<std::string, std::string>> fields_;
};

namespace detail {

inline RunConfig prepare(const Options& opt) {
    RunConfig rc = load_config_file(opt.config_path);
    if (opt.seed) rc.msa.seed = *opt.seed;
    if (opt.out_dir) rc.output_dir = *opt.out_dir;
    if (opt.workers == 0) throw ConfigError("--workers must be >= 1");
    rc.msa.exec.workers = opt.workers;
    rc.msa.record_timing = rc.timing;
    return rc;
}

inline Benchmark lookup(const std::string& name) {
    try {
        return make_benchmark(name);
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config key 'problem.name': ") + e.what());
    }
}

/// Solver settings for `b`: config values where given, else the registered scale.
inline MsaConfig solver_config(const RunConfig& rc, const Benchmark& b) {
    MsaConfig m = rc.msa;
    m.n_paths = rc.n_paths.value_or(b.n_paths);
    m.n_steps = rc.n_steps.value_or(b.n_steps);
    m.control_mode = rc.control_mode.value_or(b.mode);
    return m;
}

/// Registered scale with only the iteration settings and seed taken from the config.
inline MsaConfig registered_config(const RunConfig& rc, const Benchmark& b) {
    MsaConfig m = rc.msa;
    m.n_paths = b.n_paths;
    m.n_steps = b.n_steps;
    m.control_mode = b.mode;
    return m;
}

inline std::filesystem::path output_dir(const RunConfig& rc) {
    std::filesystem::path dir(rc.output_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

inline bool converged(Termination t) {
    return t == Termination::mu_tolerance || t == Termination::cost_tolerance;
}

inline std::string run_summary(const std::string& problem, const IterationTrace& t,
                               const std::optional<double>& j_star) {
    std::ostringstream os;
    const auto& last = t.rows.back();
    os << "problem=" << problem << '\n'
       << "termination=" << to_string(t.termination) << '\n'
       << "iterations=" << last.n << '\n'
       << "J=" << csv::format(last.cost) << '\n'
       << "J_se=" << csv::format(last.cost_se) << '\n'
       << "mu=" << csv::format(last.mu) << '\n'
       << "mu_se=" << csv::format(last.mu_se) << '\n'
       << "rho_history=";
    for (std::size_t i = 0; i < t.rows.size(); ++i) os << (i ? "," : "") << csv::format(t.rows[i].rho);
    os << '\n';
    if (j_star) os << "riccati_J=" << csv::format(*j_star) << '\n';
    return os.str();
}

template <class Body>
int guarded(const std::string& command, std::ostream& out, Body&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        out << Status(command, "config_error").add("message", e.what()).line() << '\n';
        return usage_error;
    } catch (const InvalidArgument& e) {
        out << Status(command, "config_error").add("message", e.what()).line() << '\n';
        return usage_error;
    } catch (const std::exception& e) {
        out << Status(command, "error").add("message", e.what()).line() << '\n';
        return usage_error;
    }
}

}  // namespace detail

/// Solves [problem] name; writes trace.csv and summary.txt to the output directory.
inline int cmd_run(const Options& opt, std::ostream& out) {
    return detail::guarded("run", out, [&]() -> int {
        const RunConfig rc = detail::prepare(opt);
        if (rc.problem.empty()) throw ConfigError("config key 'problem.name' is required");
        const Benchmark b = detail::lookup(rc.problem);
        const MsaConfig m = detail::solver_config(rc, b);
        const auto dir = detail::output_dir(rc);
        std::optional<double> j_star;
        if (b.lq) j_star = riccati_lq(*b.lq, TimeGrid(m.n_steps, b.problem.horizon)).optimal_value;

        try {
            const MsaResult r = run_msa(b.problem, m);
            export_csv(r.trace, (dir / "trace.csv").string());
            csv::write_file((dir / "summary.txt").string(), detail::run_summary(rc.problem, r.trace, j_star));
            const auto& last = r.trace.rows.back();
            const bool conv = detail::converged(r.trace.termination);
            Status s("run", conv ? "ok" : "not_converged");
            s.add("problem", rc.problem)
                .add("termination", to_string(r.trace.termination))
                .add("iterations", last.n)
                .add("J", last.cost)
                .add("J_se", last.cost_se)
                .add("mu", last.mu);
            if (j_star) s.add("riccati_J", *j_star);
            out << s.line() << '\n';
            return conv ? ok : check_failed;
        } catch (const DescentFailure& e) {
            export_csv(e.trace(), (dir / "trace.csv").string());
            csv::write_file((dir / "summary.txt").string(), detail::run_summary(rc.problem, e.trace(), j_star));
            out << Status("run", "descent_failure")
                       .add("problem", rc.problem)
                       .add("iterations", e.trace().rows.back().n)
                       .add("message", e.what())
                       .line()
                << '\n';
            return descent_failure;
        }
    });
}

/// x-free dynamics with g = c x: the adjoint is the constant c and Z vanishes.
inline ControlProblem driverless_problem(double c = 1.5) {
    ControlProblem p;
    p.name = "driverless";
    p.initial_state = {0.0};
    p.action_space = ActionSpace::uniform_grid(-1.0, 1.0, 3);
    p.drift = [](double, ConstVec, ConstVec a, MutVec o) { o[0] = a[0]; };
    p.diffusion = [](double, ConstVec, ConstVec, MutVec o) { o[0] = 1.0; };
    p.running_cost = [](double, ConstVec, ConstVec a) { return a[0] * a[0]; };
    p.terminal_cost = [c](ConstVec x) { return c * x[0]; };
    p.drift_jac_x = [](double, ConstVec, ConstVec, MutVec o) { o[0] = 0.0; };
    p.diffusion_jac_x = [](double, ConstVec, ConstVec, MutVec o) { o[0] = 0.0; };
    p.running_cost_grad_x = [](double, ConstVec, ConstVec, MutVec o) { o[0] = 0.0; };
    p.terminal_cost_grad_x = [c](ConstVec, MutVec o) { o[0] = c; };
    return p;
}

struct DriverlessCheck {
    double max_abs_z = 0.0;
    double max_y_deviation = 0.0;
    bool passed = false;
};

inline DriverlessCheck driverless_check(std::size_t n_paths, std::size_t n_steps, std::uint64_t seed,
                                        const RegressionBasis& basis, const Execution& exec) {
    const double c = 1.5;
    const ControlProblem p = driverless_problem(c);
    const TimeGrid grid(n_steps, p.horizon);
    const NoiseBank noise = make_noise(grid, n_paths, 1, seed, exec);
    const ControlEnsemble control(n_paths, n_steps, ControlMode::per_path, 0);
    const StateEnsemble states = simulate_forward(p, grid, noise, control, exec);
    const AdjointEnsemble adj = solve_adjoint_lsmc(p, grid, noise, states, control, basis, exec);
    DriverlessCheck r;
    for (std::size_t i = 0; i < n_paths; ++i)
        for (std::size_t k = 0; k <= n_steps; ++k) {
            r.max_y_deviation = std::max(r.max_y_deviation, std::abs(adj.y(i, k)[0] - c));
            if (k < n_steps) r.max_abs_z = std::max(r.max_abs_z, std::abs(adj.z(i, k)[0]));
        }
    r.passed = r.max_abs_z <= 1e-2 && r.max_y_deviation <= 1e-9;
    return r;
}

/// Derivative check, driverless adjoint sanity case and the LSMC versus
/// fundamental-solution cross-check; prints one table row per check.
inline int cmd_validate(const Options& opt, std::ostream& out) {
    return detail::guarded("validate", out, [&]() -> int {
        const RunConfig rc = detail::prepare(opt);
        std::vector<std::string> names = rc.validate_problems;
        if (names.empty() && !rc.problem.empty()) names.push_back(rc.problem);
        if (names.empty()) throw ConfigError("empty problem selection: set validate.problems or problem.name");

        std::vector<std::string> failed;
        auto row = [&](const std::string& problem, const std::string& check, double value,
                       const std::string& limit, bool pass) {
            out << std::left << std::setw(24) << problem << std::setw(26) << check << std::setw(14)
                << criteria::fmt(value) << std::setw(14) << limit << (pass ? "PASS" : "FAIL") << '\n';
            if (!pass) failed.push_back(problem + ":" + check);
        };
        out << std::left << std::setw(24) << "problem" << std::setw(26) << "check" << std::setw(14)
            << "value" << std::setw(14) << "limit" << "result" << '\n';

        const auto dz = driverless_check(10000, 50, rc.msa.seed, rc.msa.basis, rc.msa.exec);
        row("driverless", "max_abs_z", dz.max_abs_z, "1e-2", dz.max_abs_z <= 1e-2);
        row("driverless", "y_constant", dz.max_y_deviation, "1e-9", dz.max_y_deviation <= 1e-9);

        for (const auto& name : names) {
            const Benchmark b = detail::lookup(name);
            DerivativeCheckOptions dopt;
            dopt.n_samples = rc.validate_samples;
            dopt.step = rc.validate_step;
            dopt.box_half_width = rc.validate_box;
            dopt.seed = rc.msa.seed;
            const DerivativeReport rep = check_derivatives(b.problem, dopt);
            for (const auto& [field, err] : rep.entries())
                row(name, field, err, criteria::fmt(rc.validate_tol), err <= rc.validate_tol);

            const MsaConfig m = detail::solver_config(rc, b);
            const TimeGrid grid(m.n_steps, b.problem.horizon);
            const NoiseBank noise = make_noise(grid, m.n_paths, b.problem.noise_dim, m.seed, m.exec);
            const ControlEnsemble c0 = initial_control(b.problem, m.n_paths, m.n_steps, m.control_mode);
            const StateEnsemble st = simulate_forward(b.problem, grid, noise, c0, m.exec);
            const auto agree = criteria::adjoint_agreement(b.problem, grid, noise, st, c0, m.basis, m.exec);
            for (std::size_t j = 0; j < agree.lsmc.size(); ++j) {
                const double combined = std::hypot(agree.lsmc_se[j], agree.linear_se[j]);
                const double diff = std::abs(agree.lsmc[j] - agree.linear[j]);
                row(name, "adjoint_y0[" + std::to_string(j) + "]", diff,
                    criteria::fmt(criteria::kSlack * combined), diff <= criteria::kSlack * combined);
            }
        }

        std::string joined;
        for (const auto& f : failed) joined += (joined.empty() ? "" : ",") + f;
        Status s("validate", failed.empty() ? "ok" : "failed");
        s.add("problems", names.size());
        if (!failed.empty()) s.add("failed", joined);
        out << s.line() << '\n';
        return failed.empty() ? ok : check_failed;
    });
}

inline const std::vector<std::string>& default_bench_problems() {
    static const std::vector<std::string> names = {"lq_drift", "ctrl_diffusion", "msa_stress",
                                                   "lq_drift_small", "ctrl_diffusion_small"};
    return names;
}

/// Runs each problem at its registered scale and applies the acceptance
/// thresholds that concern it.
inline int cmd_bench(const Options& opt, std::ostream& out) {
    return detail::guarded("bench", out, [&]() -> int {
        const RunConfig rc = detail::prepare(opt);
        const std::vector<std::string> names =
            rc.bench_problems.empty() ? default_bench_problems() : rc.bench_problems;
        const auto dir = detail::output_dir(rc);
        std::vector<criteria::Check> checks;
        auto add = [&](const std::string& problem, const std::string& what, bool pass, std::string detail) {
            checks.push_back({problem + ":" + what, pass, std::move(detail)});
        };

        for (const auto& name : names) {
            const Benchmark b = detail::lookup(name);
            const MsaConfig m = detail::registered_config(rc, b);
            const TimeGrid grid(m.n_steps, b.problem.horizon);
            const NoiseBank noise = make_noise(grid, m.n_paths, b.problem.noise_dim, m.seed, m.exec);
            const ControlEnsemble c0 = initial_control(b.problem, m.n_paths, m.n_steps, m.control_mode);
            MsaResult r;
            try {
                r = run_msa(b.problem, m, grid, noise, c0);
            } catch (const DescentFailure& e) {
                export_csv(e.trace(), (dir / (name + "_trace.csv")).string());
                add(name, "descent", false, e.what());
                continue;
            }
            export_csv(r.trace, (dir / (name + "_trace.csv")).string());
            const auto& last = r.trace.rows.back();

            const auto dv = criteria::descent_violations(r.trace);
            add(name, "descent", dv == 0, "violations=" + std::to_string(dv));
            const auto mv = criteria::mu_violations(r.trace);
            add(name, "mu_nonpositive", mv == 0, "violations=" + std::to_string(mv));
            if (name == "lq_drift" || name == "ctrl_diffusion") {
                const auto at = criteria::mu_converged_at(r.trace, 1e-3, 100);
                add(name, "mu_converged", at != 0, "iteration=" + std::to_string(at));
            }
            if (b.problem.action_space.size() > 3 || b.n_steps > 5) {
                const auto agree = criteria::adjoint_agreement(b.problem, grid, noise, r.states,
                                                               r.control, m.basis, m.exec);
                add(name, "adjoint_y0", agree.passed,
                    "lsmc=" + criteria::fmt(agree.lsmc[0]) + " linear=" + criteria::fmt(agree.linear[0]));
            }
            if (name == "lq_drift") {
                const double js = riccati_lq(*b.lq, grid).optimal_value;
                const double tol = criteria::lq_tolerance(js, last.cost_se, m.n_steps);
                add(name, "riccati_N50", std::abs(last.cost - js) <= tol,
                    "J=" + criteria::fmt(last.cost) + " J*=" + criteria::fmt(js) + " tol=" + criteria::fmt(tol));

                MsaConfig fine = m;
                fine.n_steps = 200;
                const MsaResult rf = run_msa(b.problem, fine);
                export_csv(rf.trace, (dir / (name + "_N200_trace.csv")).string());
                const double jf = riccati_lq(*b.lq, TimeGrid(200, b.problem.horizon)).optimal_value;
                const double tf = criteria::lq_tolerance(jf, rf.trace.rows.back().cost_se, 200);
                add(name, "riccati_N200", std::abs(rf.trace.rows.back().cost - jf) <= tf,
                    "J=" + criteria::fmt(rf.trace.rows.back().cost) + " tol=" + criteria::fmt(tf));

                const AdjointEnsemble adj =
                    solve_adjoint_lsmc(b.problem, grid, noise, r.states, r.control, m.basis, m.exec);
                const auto pr = verify_extended_pontryagin(b.problem, grid, r.states, adj, r.control, last.rho);
                add(name, "pontryagin", pr.violation_fraction <= 0.01,
                    "fraction=" + criteria::fmt(pr.violation_fraction));
            }
            if (m.control_mode == ControlMode::deterministic && b.n_steps <= 5) {
                const BruteForceResult bf = brute_force_optimal(b.problem, grid, noise, m.exec);
                add(name, "brute_force", last.cost <= bf.j_star + criteria::kSlack * last.cost_se,
                    "J=" + criteria::fmt(last.cost) + " j*=" + criteria::fmt(bf.j_star));
            }
            if (name == "msa_stress") {
                MsaConfig classical = m;
                classical.rho_initial = 0.0;
                classical.backtracking = false;
                classical.max_iterations = 20;
                const MsaResult rc0 = run_msa(b.problem, classical, grid, noise, c0);
                export_csv(rc0.trace, (dir / "msa_stress_classical_trace.csv").string());
                const auto up = criteria::ascent_events(rc0.trace, 20);
                add(name, "classical_ascent", up >= 1, "ascents=" + std::to_string(up));
            }
        }

        std::ostringstream summary;
        std::size_t n_fail = 0;
        for (const auto& c : checks) {
            summary << (c.passed ? "PASS " : "FAIL ") << c.name << ' ' << c.detail << '\n';
            n_fail += !c.passed;
        }
        csv::write_file((dir / "bench_summary.txt").string(), summary.str());
        out << summary.str();
        out << Status("bench", n_fail == 0 ? "ok" : "failed")
                   .add("checks", checks.size())
                   .add("failed", n_fail)
                   .line()
            << '\n';
        return n_fail == 0 ? ok : check_failed;
    });
}

/// Rate study against an oracle optimum, or replay of a synthetic gap sequence.
inline int cmd_rate(const Options& opt, std::ostream& out) {
    return detail::guarded("rate", out, [&]() -> int {
        const RunConfig rc = detail::prepare(opt);
        const auto dir = detail::output_dir(rc);
        std::ostringstream summary;
        std::size_t n_fail = 0, n_done = 0;
        auto record = [&](const std::string& label, const RateReport& rep) {
            export_csv(rep, (dir / ("rate_" + label + ".csv")).string());
            summary << label << " status=" << to_string(rep.status) << " j_star=" << csv::format(rep.j_star)
                    << " resolved=" << rep.resolved_count() << " slope=" << csv::format(rep.slope)
                    << " sup_n_bn=" << csv::format(rep.sup_n_gap) << '\n';
            n_fail += !rep.passed();
            ++n_done;
        };

        if (rc.rate_synthetic != "none") {
            const auto kind = rc.rate_synthetic == "inverse_n" ? SyntheticGap::inverse_n : SyntheticGap::inverse_log;
            const IterationTrace t = synthetic_trace(kind, 0.0, rc.rate_n_max);
            record("synthetic_" + rc.rate_synthetic, rate_fit(t, 0.0, rc.rate_n_min, rc.rate_n_max));
        } else {
            std::vector<std::string> names = rc.rate_problems;
            if (names.empty()) names.push_back(rc.problem.empty() ? "lq_drift" : rc.problem);
            for (const auto& name : names) {
                const Benchmark b = detail::lookup(name);
                const MsaConfig m = detail::solver_config(rc, b);
                const TimeGrid grid(m.n_steps, b.problem.horizon);
                const NoiseBank noise = make_noise(grid, m.n_paths, b.problem.noise_dim, m.seed, m.exec);

                std::string oracle = rc.rate_oracle;
                if (oracle == "auto") oracle = b.lq ? "riccati" : "brute_force";
                double j_star = 0.0;
                if (oracle == "riccati" || oracle == "discrete_riccati") {
                    if (!b.lq) throw ConfigError("problem '" + name + "' has no Riccati oracle");
                    j_star = oracle == "riccati" ? riccati_lq(*b.lq, grid).optimal_value
                                                 : discrete_riccati_lq(*b.lq, grid);
                } else {
                    if (m.control_mode != ControlMode::deterministic)
                        throw ConfigError("problem '" + name +
                                          "' has no oracle: brute force needs deterministic controls");
                    try {
                        j_star = brute_force_optimal(b.problem, grid, noise, m.exec).j_star;
                    } catch (const ResourceError& e) {
                        throw ConfigError("problem '" + name + "' has no oracle: " + e.what());
                    }
                }
                const MsaResult r = run_msa(b.problem, m, grid, noise,
                                            initial_control(b.problem, m.n_paths, m.n_steps, m.control_mode));
                export_csv(r.trace, (dir / (name + "_trace.csv")).string());
                record(name, rate_fit(r.trace, j_star, rc.rate_n_min, rc.rate_n_max));
            }
        }
        csv::write_file((dir / "rate_summary.txt").string(), summary.str());
        out << summary.str();
        out << Status("rate", n_fail == 0 ? "ok" : "failed").add("reports", n_done).add("failed", n_fail).line()
            << '\n';
        return n_fail == 0 ? ok : check_failed;
    });
}

}  // namespace mmsa::cli
