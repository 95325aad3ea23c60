#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmsa/bsde.hpp"
#include "mmsa/control.hpp"
#include "mmsa/error.hpp"
#include "mmsa/parallel.hpp"
#include "mmsa/problem.hpp"
#include "mmsa/sde.hpp"

namespace mmsa {

inline constexpr std::uint64_t kDefaultSeed = 20190417;

namespace detail {
inline std::string short_number(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}
}  // namespace detail

struct MsaConfig {
    double rho_initial = 1.0;
    /// Multiplier applied to rho after a rejected candidate.
    double rho_growth = 2.0;
    double rho_max = 65536.0;
    double tol_mu = 1e-3;
    double tol_dj = 1e-8;
    std::size_t max_iterations = 100;

    std::size_t n_paths = 10000;
    std::size_t n_steps = 50;
    std::uint64_t seed = kDefaultSeed;
    RegressionBasis basis{};
    ControlMode control_mode = ControlMode::per_path;

    /// When false, rho stays fixed and every candidate is adopted whether or
    /// not it passes the descent test (rho_initial = 0 gives the classical
    /// method of successive approximations).
    bool backtracking = true;
    /// Candidates pass when J_new <= J_old + descent_slack * SE(J_new - J_old).
    double descent_slack = 3.0;
    /// When an update stalls at rho > 0, retry with rho / rho_growth, ...,
    /// down to rho_probe_floor and then 0, before declaring a fixed point.
    bool stall_probe = true;
    double rho_probe_floor = 1e-3;
    /// Record wall-clock per iteration. Off by default so traces are
    /// reproducible byte for byte.
    bool record_timing = false;

    Execution exec{};

    void validate() const {
        auto fail = [](const std::string& m) { throw InvalidArgument("msa config: " + m); };
        if (!(rho_initial >= 0.0) || !std::isfinite(rho_initial)) fail("rho_initial must be >= 0");
        if (!(rho_growth > 1.0) || !std::isfinite(rho_growth)) fail("rho_growth must be > 1");
        if (!(rho_max >= 0.0) || std::isnan(rho_max)) fail("rho_max must be >= 0");
        if (rho_initial > rho_max) fail("rho_initial must not exceed rho_max");
        if (!(tol_mu > 0.0)) fail("tol_mu must be > 0");
        if (!(tol_dj > 0.0)) fail("tol_dj must be > 0");
        if (max_iterations == 0) fail("max_iterations must be >= 1");
        if (n_paths == 0) fail("n_paths must be >= 1");
        if (n_steps == 0) fail("n_steps must be >= 1");
        if (!(descent_slack >= 0.0)) fail("descent_slack must be >= 0");
        if (!(rho_probe_floor > 0.0)) fail("rho_probe_floor must be > 0");
        if (basis.ridge < 0.0) fail("ridge must be >= 0");
    }
};

/// Constant control at the action closest to the centroid of the action set.
inline ControlEnsemble initial_control(const ControlProblem& p, std::size_t n_paths,
                                       std::size_t n_steps, ControlMode mode) {
    return ControlEnsemble(n_paths, n_steps, mode,
                           static_cast<ControlEnsemble::Index>(p.action_space.centroid_index()));
}

/// Per (path, step): argmin over the action set of the augmented Hamiltonian
/// around the previous action. Ties keep the previous action, otherwise the
/// lowest index wins. In deterministic mode the path-averaged augmented
/// Hamiltonian is minimised, one action per step.
inline ControlEnsemble update_control(const ControlProblem& p, const TimeGrid& grid,
                                      const StateEnsemble& states, const AdjointEnsemble& adj,
                                      const ControlEnsemble& prev, double rho,
                                      const Execution& exec = {}) {
    if (!(rho >= 0.0)) throw InvalidArgument("update_control: rho must be nonnegative");
    const std::size_t M = states.n_paths(), N = grid.n_steps(), A = p.action_space.size();
    prev.require_compatible(M, N, A);
    if (adj.n_paths() != M || adj.n_steps() != N)
        throw InvalidArgument("update_control: adjoint shape mismatch");
    const bool grad = rho > 0.0;
    ControlEnsemble next = prev;

    if (prev.mode() == ControlMode::per_path) {
        parallel_for(M, exec, [&](std::size_t begin, std::size_t end) {
            HamiltonianTerms base(p), cand(p);
            for (std::size_t i = begin; i < end; ++i) {
                for (std::size_t k = 0; k < N; ++k) {
                    const double t = grid.node(k);
                    const auto x = states.at(i, k);
                    const auto y = adj.y(i, k);
                    const auto z = adj.z(i, k);
                    const auto a_prev = prev.at(i, k);
                    base.evaluate(p, t, x, y, z, p.action_space.point(a_prev), grad);
                    auto best = a_prev;
                    double best_val = augmented_from_terms(base, base, rho);
                    for (std::size_t a = 0; a < A; ++a) {
                        if (a == a_prev) continue;
                        cand.evaluate(p, t, x, y, z, p.action_space.point(a), grad);
                        const double v = augmented_from_terms(cand, base, rho);
                        if (v < best_val) {
                            best_val = v;
                            best = static_cast<ControlEnsemble::Index>(a);
                        }
                    }
                    next.set(i, k, best);
                }
            }
        });
        return next;
    }

    std::vector<double> values(M * A);
    for (std::size_t k = 0; k < N; ++k) {
        const double t = grid.node(k);
        const auto a_prev = prev.at(0, k);
        parallel_for(M, exec, [&](std::size_t begin, std::size_t end) {
            HamiltonianTerms base(p), cand(p);
            for (std::size_t i = begin; i < end; ++i) {
                const auto x = states.at(i, k);
                const auto y = adj.y(i, k);
                const auto z = adj.z(i, k);
                base.evaluate(p, t, x, y, z, p.action_space.point(a_prev), grad);
                for (std::size_t a = 0; a < A; ++a) {
                    if (a == a_prev) {
                        values[i * A + a] = augmented_from_terms(base, base, rho);
                        continue;
                    }
                    cand.evaluate(p, t, x, y, z, p.action_space.point(a), grad);
                    values[i * A + a] = augmented_from_terms(cand, base, rho);
                }
            }
        });
        std::vector<double> sums(A, 0.0);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t a = 0; a < A; ++a) sums[a] += values[i * A + a];
        auto best = a_prev;
        double best_val = sums[a_prev];
        for (std::size_t a = 0; a < A; ++a)
            if (a != a_prev && sums[a] < best_val) {
                best_val = sums[a];
                best = static_cast<ControlEnsemble::Index>(a);
            }
        next.set_step(k, best);
    }
    return next;
}

/// Monte-Carlo estimate of E sum_k [H(new_k) - H(prev_k)] dt along the
/// current (X, Y, Z).
inline Estimate compute_mu(const ControlProblem& p, const TimeGrid& grid,
                           const StateEnsemble& states, const AdjointEnsemble& adj,
                           const ControlEnsemble& next, const ControlEnsemble& prev,
                           const Execution& exec = {}) {
    const std::size_t M = states.n_paths(), N = grid.n_steps(), A = p.action_space.size();
    next.require_compatible(M, N, A);
    prev.require_compatible(M, N, A);
    std::vector<double> per_path(M, 0.0);
    const double dt = grid.dt();
    parallel_for(M, exec, [&](std::size_t begin, std::size_t end) {
        HamiltonianTerms hn(p), hp(p);
        for (std::size_t i = begin; i < end; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < N; ++k) {
                const auto an = next.at(i, k), ap = prev.at(i, k);
                if (an == ap) continue;
                const double t = grid.node(k);
                hn.evaluate(p, t, states.at(i, k), adj.y(i, k), adj.z(i, k),
                            p.action_space.point(an), false);
                hp.evaluate(p, t, states.at(i, k), adj.y(i, k), adj.z(i, k),
                            p.action_space.point(ap), false);
                s += hn.hamiltonian() - hp.hamiltonian();
            }
            per_path[i] = s * dt;
        }
    });
    return mean_and_se(per_path);
}

/// One row of the solver's audit trail. Row 0 describes the initial guess.
struct IterationRecord {
    std::size_t n = 0;
    double cost = 0.0;
    double cost_se = 0.0;
    /// J_n - J_{n-1} on common noise and the standard error of that difference.
    double delta_cost = 0.0;
    double delta_se = 0.0;
    double mu = 0.0;
    double mu_se = 0.0;
    double rho = 0.0;
    std::size_t backtracks = 0;
    /// Updates tried below rho after a stalled update.
    std::size_t probes = 0;
    bool accepted = true;
    /// Number of (path, step) entries changed by the update.
    std::size_t changed = 0;
    double wall_ms = 0.0;
};

enum class Termination { mu_tolerance, cost_tolerance, max_iterations, descent_failure };

inline const char* to_string(Termination t) {
    switch (t) {
        case Termination::mu_tolerance: return "mu_tolerance";
        case Termination::cost_tolerance: return "cost_tolerance";
        case Termination::max_iterations: return "max_iterations";
        case Termination::descent_failure: return "descent_failure";
    }
    return "unknown";
}

struct IterationTrace {
    std::vector<IterationRecord> rows;
    Termination termination = Termination::max_iterations;
};

/// rho grew past rho_max without finding a descending candidate.
class DescentFailure : public Error {
public:
    DescentFailure(const std::string& what, IterationTrace trace, ControlEnsemble control)
        : Error(what), trace_(std::move(trace)), control_(std::move(control)) {}
    const IterationTrace& trace() const { return trace_; }
    const ControlEnsemble& control() const { return control_; }

private:
    IterationTrace trace_;
    ControlEnsemble control_;
};

struct MsaResult {
    ControlEnsemble control;
    /// States simulated under the final control.
    StateEnsemble states;
    IterationTrace trace;
};

/// Modified method of successive approximations on a given grid and noise bank.
inline MsaResult run_msa(const ControlProblem& p, const MsaConfig& cfg, const TimeGrid& grid,
                         const NoiseBank& noise, const ControlEnsemble& initial) {
    cfg.validate();
    p.validate();
    const std::size_t M = noise.n_paths(), N = grid.n_steps();
    initial.require_compatible(M, N, p.action_space.size());
    const auto& exec = cfg.exec;
    using clock = std::chrono::steady_clock;

    ControlEnsemble control = initial;
    StateEnsemble states = simulate_forward(p, grid, noise, control, exec);
    std::vector<double> costs = path_costs(p, grid, states, control, exec);

    IterationTrace trace;
    {
        const Estimate j0 = mean_and_se(costs);
        IterationRecord r0;
        r0.cost = j0.value;
        r0.cost_se = j0.standard_error;
        r0.rho = cfg.rho_initial;
        trace.rows.push_back(r0);
    }

    struct Candidate {
        ControlEnsemble control;
        StateEnsemble states;
        std::vector<double> costs;
        Estimate mu, dj;
        std::size_t changed = 0;
        bool accepted = true;
    };
    std::vector<double> diff(M);
    auto propose = [&](const AdjointEnsemble& adj, double r) {
        Candidate c;
        c.control = update_control(p, grid, states, adj, control, r, exec);
        c.changed = c.control.count_changes(control);
        if (c.changed == 0) {
            c.states = states;
            c.costs = costs;
            return c;
        }
        c.mu = compute_mu(p, grid, states, adj, c.control, control, exec);
        c.states = simulate_forward(p, grid, noise, c.control, exec);
        c.costs = path_costs(p, grid, c.states, c.control, exec);
        for (std::size_t i = 0; i < M; ++i) diff[i] = c.costs[i] - costs[i];
        c.dj = mean_and_se(diff);
        c.accepted = c.dj.value <= cfg.descent_slack * c.dj.standard_error;
        return c;
    };
    auto fill = [&](IterationRecord& row, const Candidate& c, double r, clock::time_point start) {
        const Estimate j = mean_and_se(c.costs);
        row.cost = j.value;
        row.cost_se = j.standard_error;
        row.delta_cost = c.dj.value;
        row.delta_se = c.dj.standard_error;
        row.mu = c.mu.value;
        row.mu_se = c.mu.standard_error;
        row.rho = r;
        row.changed = c.changed;
        row.accepted = c.accepted;
        if (cfg.record_timing)
            row.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    };

    double rho = cfg.rho_initial;
    for (std::size_t n = 1; n <= cfg.max_iterations; ++n) {
        const auto start = clock::now();
        const AdjointEnsemble adj = solve_adjoint_lsmc(p, grid, noise, states, control, cfg.basis, exec);

        IterationRecord row;
        row.n = n;
        Candidate cand = propose(adj, rho);
        while (!cand.accepted && cfg.backtracking) {
            const double next_rho = rho > 0.0 ? rho * cfg.rho_growth : 1.0;
            ++row.backtracks;
            if (next_rho > cfg.rho_max) {
                fill(row, cand, rho, start);
                trace.rows.push_back(row);
                trace.termination = Termination::descent_failure;
                throw DescentFailure("no descending update up to rho_max = " +
                                         detail::short_number(cfg.rho_max) + " at iteration " +
                                         std::to_string(n),
                                     std::move(trace), std::move(control));
            }
            rho = next_rho;
            cand = propose(adj, rho);
        }

        // The penalty can pin the control on a coarse action grid even though
        // a smaller rho would still descend; look below rho before stopping.
        if (cand.changed == 0 && rho > 0.0 && cfg.backtracking && cfg.stall_probe) {
            double r = rho;
            while (r > 0.0) {
                r /= cfg.rho_growth;
                if (r < cfg.rho_probe_floor) r = 0.0;
                ++row.probes;
                Candidate probe = propose(adj, r);
                if (probe.changed == 0) continue;
                // Probes must lower the estimate outright; accepting moves
                // inside the noise slack here lets the iteration cycle.
                if (probe.accepted && probe.dj.value < 0.0) {
                    cand = std::move(probe);
                    rho = r;
                }
                break;
            }
        }

        fill(row, cand, rho, start);
        control = std::move(cand.control);
        states = std::move(cand.states);
        costs = std::move(cand.costs);
        trace.rows.push_back(row);

        if (std::abs(row.mu) <= cfg.tol_mu) {
            trace.termination = Termination::mu_tolerance;
            return {std::move(control), std::move(states), std::move(trace)};
        }
        if (row.accepted && std::abs(row.delta_cost) <= cfg.tol_dj) {
            trace.termination = Termination::cost_tolerance;
            return {std::move(control), std::move(states), std::move(trace)};
        }
    }
    trace.termination = Termination::max_iterations;
    return {std::move(control), std::move(states), std::move(trace)};
}

/// Builds the grid and the shared noise bank from the config, then iterates.
inline MsaResult run_msa(const ControlProblem& p, const MsaConfig& cfg,
                         const ControlEnsemble& initial) {
    cfg.validate();
    p.validate();
    const TimeGrid grid(cfg.n_steps, p.horizon);
    const NoiseBank noise = make_noise(grid, cfg.n_paths, p.noise_dim, cfg.seed, cfg.exec);
    return run_msa(p, cfg, grid, noise, initial);
}

inline MsaResult run_msa(const ControlProblem& p, const MsaConfig& cfg) {
    return run_msa(p, cfg, initial_control(p, cfg.n_paths, cfg.n_steps, cfg.control_mode));
}

struct PontryaginReport {
    std::size_t checked = 0;
    std::size_t violations = 0;
    double violation_fraction = 0.0;
    /// Largest H~(a*, a*) - H~(a*, a) seen; 0 when every comparison holds.
    double worst_gap = 0.0;
};

struct PontryaginOptions {
    /// Number of sampled (path, step) pairs; 0 checks every pair.
    std::size_t n_samples = 2000;
    double tol = 1e-3;
    double se_multiplier = 3.0;
    std::uint64_t seed = kDefaultSeed;
};

/// Checks H~(t,X,Y,Z,a*,a*) <= H~(t,X,Y,Z,a*,a) + tol + k * local SE for every
/// action a at sampled (path, step) pairs. The local SE propagates the
/// regression standard errors of Y and Z through the b and sigma differences.
inline PontryaginReport verify_extended_pontryagin(const ControlProblem& p, const TimeGrid& grid,
                                                   const StateEnsemble& states,
                                                   const AdjointEnsemble& adj,
                                                   const ControlEnsemble& control, double rho,
                                                   const PontryaginOptions& opt = {}) {
    const std::size_t M = states.n_paths(), N = grid.n_steps(), A = p.action_space.size();
    control.require_compatible(M, N, A);
    const std::size_t d = p.state_dim, w = d * p.noise_dim;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (opt.n_samples == 0 || opt.n_samples >= M * N) {
        pairs.reserve(M * N);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < N; ++k) pairs.emplace_back(i, k);
    } else {
        std::mt19937_64 rng(opt.seed);
        std::uniform_int_distribution<std::size_t> path(0, M - 1), step(0, N - 1);
        for (std::size_t s = 0; s < opt.n_samples; ++s) pairs.emplace_back(path(rng), step(rng));
    }

    PontryaginReport rep;
    HamiltonianTerms star(p), cand(p);
    for (const auto& [i, k] : pairs) {
        const double t = grid.node(k);
        const auto x = states.at(i, k);
        const auto y = adj.y(i, k);
        const auto z = adj.z(i, k);
        const auto a_star = control.at(i, k);
        star.evaluate(p, t, x, y, z, p.action_space.point(a_star), true);
        const double h_star = augmented_from_terms(star, star, rho);
        bool violated = false;
        for (std::size_t a = 0; a < A; ++a) {
            cand.evaluate(p, t, x, y, z, p.action_space.point(a), true);
            const double gap = h_star - augmented_from_terms(cand, star, rho);
            double local_se = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                local_se += std::abs(cand.drift()[j] - star.drift()[j]) * adj.y_se(k)[j];
            for (std::size_t q = 0; q < w; ++q)
                local_se += std::abs(cand.diffusion()[q] - star.diffusion()[q]) * adj.z_se(k)[q];
            rep.worst_gap = std::max(rep.worst_gap, gap);
            if (gap > opt.tol + opt.se_multiplier * local_se) violated = true;
        }
        ++rep.checked;
        rep.violations += violated;
    }
    rep.violation_fraction =
        rep.checked == 0 ? 0.0 : static_cast<double>(rep.violations) / static_cast<double>(rep.checked);
    return rep;
}

}  // namespace mmsa
