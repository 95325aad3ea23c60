#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmsa/control.hpp"
#include "mmsa/error.hpp"
#include "mmsa/parallel.hpp"
#include "mmsa/problem.hpp"
#include "mmsa/sde.hpp"

namespace mmsa {

/// Problems of the form
///   b = b1(t) x + b2(t, a),  sigma = sigma1(t) x + sigma2(t, a),  f = f1(t, x) + f2(t, a).
/// b1 uses the drift_jac_x layout and sigma1 the diffusion_jac_x layout, so
/// both double as the Jacobians.
struct StructuredProblem {
    using Matrix = std::function<void(double t, MutVec out)>;
    using ActionTerm = std::function<void(double t, ConstVec a, MutVec out)>;

    std::string name;
    std::size_t state_dim = 1;
    std::size_t noise_dim = 1;
    double horizon = 1.0;
    std::vector<double> initial_state;
    ActionSpace action_space;

    Matrix b1;
    ActionTerm b2;
    Matrix sigma1;
    ActionTerm sigma2;
    std::function<double(double t, ConstVec x)> f1;
    std::function<void(double t, ConstVec x, MutVec out)> f1_grad_x;
    std::function<double(double t, ConstVec a)> f2;
    std::function<double(ConstVec x)> g;
    std::function<void(ConstVec x, MutVec out)> g_grad_x;

    ControlProblem to_control_problem() const {
        const std::size_t d = state_dim, dp = noise_dim;
        ControlProblem p;
        p.name = name;
        p.state_dim = d;
        p.noise_dim = dp;
        p.horizon = horizon;
        p.initial_state = initial_state;
        p.action_space = action_space;

        auto b1f = b1;
        auto b2f = b2;
        auto s1f = sigma1;
        auto s2f = sigma2;
        p.drift = [=](double t, ConstVec x, ConstVec a, MutVec out) {
            thread_local std::vector<double> m;
            m.resize(d * d);
            b1f(t, m);
            b2f(t, a, out);
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t i = 0; i < d; ++i) out[j] += m[j * d + i] * x[i];
        };
        p.diffusion = [=](double t, ConstVec x, ConstVec a, MutVec out) {
            thread_local std::vector<double> m;
            m.resize(d * dp * d);
            s1f(t, m);
            s2f(t, a, out);
            for (std::size_t q = 0; q < d * dp; ++q)
                for (std::size_t i = 0; i < d; ++i) out[q] += m[q * d + i] * x[i];
        };
        p.drift_jac_x = [=](double t, ConstVec, ConstVec, MutVec out) { b1f(t, out); };
        p.diffusion_jac_x = [=](double t, ConstVec, ConstVec, MutVec out) { s1f(t, out); };

        auto f1f = f1;
        auto f2f = f2;
        auto f1g = f1_grad_x;
        p.running_cost = [=](double t, ConstVec x, ConstVec a) { return f1f(t, x) + f2f(t, a); };
        p.running_cost_grad_x = [=](double t, ConstVec x, ConstVec, MutVec out) { f1g(t, x, out); };
        p.terminal_cost = g;
        p.terminal_cost_grad_x = g_grad_x;
        return p;
    }
};

/// Scalar linear-quadratic problem
///   dX = (beta X + gain a) dt + nu dW,  cost E[int q X^2 + r a^2 dt + q_T X_T^2].
struct LqSpec {
    double horizon = 1.0;
    double x0 = 1.0;
    std::function<double(double)> beta = [](double) { return 0.0; };
    double gain = 1.0;
    double nu = 0.0;
    std::function<double(double)> q = [](double) { return 1.0; };
    std::function<double(double)> r = [](double) { return 1.0; };
    double q_terminal = 0.0;

    void validate() const {
        if (!(horizon > 0.0)) throw InvalidArgument("lq spec: horizon must be positive");
        if (!beta || !q || !r) throw InvalidArgument("lq spec: missing coefficient function");
        if (q_terminal < 0.0) throw InvalidArgument("lq spec: q_terminal must be >= 0");
    }
};

/// Builds the structured ControlProblem of an LqSpec on a given action grid.
inline StructuredProblem lq_structured(const std::string& name, const LqSpec& s, ActionSpace actions) {
    s.validate();
    StructuredProblem sp;
    sp.name = name;
    sp.horizon = s.horizon;
    sp.initial_state = {s.x0};
    sp.action_space = std::move(actions);
    sp.b1 = [beta = s.beta](double t, MutVec out) { out[0] = beta(t); };
    sp.b2 = [k = s.gain](double, ConstVec a, MutVec out) { out[0] = k * a[0]; };
    sp.sigma1 = [](double, MutVec out) { out[0] = 0.0; };
    sp.sigma2 = [nu = s.nu](double, ConstVec, MutVec out) { out[0] = nu; };
    sp.f1 = [q = s.q](double t, ConstVec x) { return q(t) * x[0] * x[0]; };
    sp.f1_grad_x = [q = s.q](double t, ConstVec x, MutVec out) { out[0] = 2.0 * q(t) * x[0]; };
    sp.f2 = [r = s.r](double t, ConstVec a) { return r(t) * a[0] * a[0]; };
    sp.g = [qt = s.q_terminal](ConstVec x) { return qt * x[0] * x[0]; };
    sp.g_grad_x = [qt = s.q_terminal](ConstVec x, MutVec out) { out[0] = 2.0 * qt * x[0]; };
    return sp;
}

/// Direct evaluation of H for an LqSpec, written without the ControlProblem
/// machinery. Used to cross-check `hamiltonian`.
inline double lq_hamiltonian_reference(const LqSpec& s, double t, double x, double y, double z,
                                       double a) {
    const double drift = s.beta(t) * x + s.gain * a;
    const double cost = s.q(t) * x * x + s.r(t) * a * a;
    return drift * y + s.nu * z + cost;
}

struct RiccatiSolution {
    double optimal_value = 0.0;
    /// P and c at the solver grid nodes; V(t, x) = P(t) x^2 + c(t).
    std::vector<double> p;
    std::vector<double> c;
    double horizon = 1.0;
    std::size_t n_steps = 0;
    std::function<double(double)> control_cost;
    double gain = 1.0;

    double p_at(double t) const {
        const double h = horizon / static_cast<double>(n_steps);
        double u = t / h;
        if (u <= 0.0) return p.front();
        if (u >= static_cast<double>(n_steps)) return p.back();
        const auto k = static_cast<std::size_t>(u);
        u -= static_cast<double>(k);
        return (1.0 - u) * p[k] + u * p[k + 1];
    }

    /// Optimal feedback a*(t, x) = feedback_gain(t) * x = -gain P(t) x / r(t).
    double feedback_gain(double t) const { return -gain * p_at(t) / control_cost(t); }
};

/// Backward RK4 on P' = gain^2 P^2 / r - 2 beta P - q, c' = -nu^2 P with
/// `refine` substeps per solver interval.
inline RiccatiSolution riccati_lq(const LqSpec& s, const TimeGrid& grid, std::size_t refine = 10) {
    s.validate();
    if (refine == 0) throw InvalidArgument("riccati_lq: refine must be >= 1");
    const std::size_t N = grid.n_steps(), n_fine = N * refine;
    const double h = s.horizon / static_cast<double>(n_fine);
    auto rhs = [&](double t, double pv, double& dp, double& dc) {
        const double r = s.r(t);
        if (!(r > 0.0)) throw InvalidArgument("riccati_lq: r(t) must be positive");
        dp = s.gain * s.gain * pv * pv / r - 2.0 * s.beta(t) * pv - s.q(t);
        dc = -s.nu * s.nu * pv;
    };
    RiccatiSolution out;
    out.horizon = s.horizon;
    out.n_steps = N;
    out.control_cost = s.r;
    out.gain = s.gain;
    out.p.assign(N + 1, 0.0);
    out.c.assign(N + 1, 0.0);
    double pv = s.q_terminal, cv = 0.0;
    out.p[N] = pv;
    for (std::size_t m = n_fine; m > 0; --m) {
        const double t = static_cast<double>(m) * h;
        double k1p, k1c, k2p, k2c, k3p, k3c, k4p, k4c;
        rhs(t, pv, k1p, k1c);
        rhs(t - 0.5 * h, pv - 0.5 * h * k1p, k2p, k2c);
        rhs(t - 0.5 * h, pv - 0.5 * h * k2p, k3p, k3c);
        rhs(t - h, pv - h * k3p, k4p, k4c);
        pv -= h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        cv -= h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
        if (!std::isfinite(pv) || !std::isfinite(cv))
            throw Error("riccati_lq: solution blew up at t = " + std::to_string(t - h));
        if ((m - 1) % refine == 0) {
            out.p[(m - 1) / refine] = pv;
            out.c[(m - 1) / refine] = cv;
        }
    }
    out.optimal_value = out.p[0] * s.x0 * s.x0 + out.c[0];
    return out;
}

/// Optimal cost of the Euler-discretised LQ problem on `grid` with
/// unconstrained actions (left-endpoint running cost, as in estimate_cost).
inline double discrete_riccati_lq(const LqSpec& s, const TimeGrid& grid) {
    s.validate();
    const double dt = grid.dt();
    double pv = s.q_terminal, cv = 0.0;
    for (std::size_t k = grid.n_steps(); k > 0; --k) {
        const double t = grid.node(k - 1);
        const double a = 1.0 + s.beta(t) * dt, b = s.gain * dt;
        const double denom = s.r(t) * dt + b * b * pv;
        cv += pv * s.nu * s.nu * dt;
        pv = s.q(t) * dt + a * a * pv - (a * b * pv) * (a * b * pv) / denom;
    }
    return pv * s.x0 * s.x0 + cv;
}

/// Y_0 of the adjoint under the feedback a = k(t) X: Y = phi(t) X with
/// phi' = -(2 beta + gain k) phi - 2 q, phi(T) = 2 q_T, integrated by RK4.
inline double lq_feedback_adjoint_y0(const LqSpec& s, const std::function<double(double)>& k,
                                     std::size_t n_fine = 20000) {
    s.validate();
    const double h = s.horizon / static_cast<double>(n_fine);
    auto rhs = [&](double t, double phi) {
        return -(2.0 * s.beta(t) + s.gain * k(t)) * phi - 2.0 * s.q(t);
    };
    double phi = 2.0 * s.q_terminal;
    for (std::size_t m = n_fine; m > 0; --m) {
        const double t = static_cast<double>(m) * h;
        const double k1 = rhs(t, phi);
        const double k2 = rhs(t - 0.5 * h, phi - 0.5 * h * k1);
        const double k3 = rhs(t - 0.5 * h, phi - 0.5 * h * k2);
        const double k4 = rhs(t - h, phi - h * k3);
        phi -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return phi * s.x0;
}

struct BruteForceResult {
    double j_star = 0.0;
    double standard_error = 0.0;
    std::vector<ControlEnsemble::Index> best_sequence;
    std::size_t n_sequences = 0;
};

inline constexpr std::size_t kBruteForceBudget = 1'000'000;

/// Exhaustive search over deterministic action sequences on the shared noise.
/// Sequence s encodes step 0 in its most significant base-|A| digit; among
/// equal costs the smallest s wins.
inline BruteForceResult brute_force_optimal(const ControlProblem& p, const TimeGrid& grid,
                                            const NoiseBank& noise, const Execution& exec = {},
                                            std::size_t budget = kBruteForceBudget) {
    p.validate();
    const std::size_t N = grid.n_steps(), A = p.action_space.size(), M = noise.n_paths();
    std::size_t total = 1;
    for (std::size_t k = 0; k < N; ++k) {
        if (total > budget / A)
            throw ResourceError("brute_force_optimal: |A|^N exceeds the budget of " +
                                std::to_string(budget) + " sequences");
        total *= A;
    }

    auto decode = [&](std::size_t s) {
        std::vector<ControlEnsemble::Index> seq(N);
        for (std::size_t k = N; k > 0; --k) {
            seq[k - 1] = static_cast<ControlEnsemble::Index>(s % A);
            s /= A;
        }
        return seq;
    };

    struct Best {
        double j = std::numeric_limits<double>::infinity();
        double se = 0.0;
        std::size_t index = 0;
        bool found = false;
    };
    const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(exec.workers, total));
    std::vector<Best> partial(chunks);
    const Execution serial{1};
    parallel_for(chunks, exec, [&](std::size_t cb, std::size_t ce) {
        for (std::size_t c = cb; c < ce; ++c) {
            const std::size_t lo = total * c / chunks, hi = total * (c + 1) / chunks;
            Best& b = partial[c];
            for (std::size_t s = lo; s < hi; ++s) {
                const auto seq = decode(s);
                const auto control = ControlEnsemble::from_sequence(M, seq);
                const auto states = simulate_forward(p, grid, noise, control, serial);
                const Estimate e = estimate_cost(p, grid, states, control, serial);
                if (!b.found || e.value < b.j) {
                    b = {e.value, e.standard_error, s, true};
                }
            }
        }
    });
    Best best;
    for (const Best& b : partial)
        if (b.found && (!best.found || b.j < best.j)) best = b;

    BruteForceResult out;
    out.j_star = best.j;
    out.standard_error = best.se;
    out.best_sequence = decode(best.index);
    out.n_sequences = total;
    return out;
}

/// A registered benchmark: the problem plus whatever oracle data it carries.
struct Benchmark {
    ControlProblem problem;
    /// Set for problems with a Riccati oracle.
    std::optional<LqSpec> lq;
    /// Scale used by acceptance runs.
    std::size_t n_steps = 50;
    std::size_t n_paths = 10000;
    ControlMode mode = ControlMode::per_path;
};

namespace detail {

inline LqSpec lq_drift_spec() {
    LqSpec s;
    s.horizon = 1.0;
    s.x0 = 1.0;
    s.beta = [](double) { return 0.0; };
    s.gain = 1.0;
    s.nu = 0.3;
    s.q = [](double) { return 1.0; };
    s.r = [](double) { return 1.0; };
    s.q_terminal = 0.5;
    return s;
}

/// b = beta x + gain a, sigma = s1 x + s0 + kappa a, f = q x^2 + r a^2, g = qT x^2.
inline StructuredProblem ctrl_diffusion_structured(const std::string& name, ActionSpace actions) {
    constexpr double beta = 0.0, gain = 1.0, s1 = 0.2, s0 = 0.3, kappa = 0.5;
    constexpr double q = 1.0, r = 0.5, qT = 0.5;
    StructuredProblem sp;
    sp.name = name;
    sp.horizon = 1.0;
    sp.initial_state = {1.0};
    sp.action_space = std::move(actions);
    sp.b1 = [](double, MutVec out) { out[0] = beta; };
    sp.b2 = [](double, ConstVec a, MutVec out) { out[0] = gain * a[0]; };
    sp.sigma1 = [](double, MutVec out) { out[0] = s1; };
    sp.sigma2 = [](double, ConstVec a, MutVec out) { out[0] = s0 + kappa * a[0]; };
    sp.f1 = [](double, ConstVec x) { return q * x[0] * x[0]; };
    sp.f1_grad_x = [](double, ConstVec x, MutVec out) { out[0] = 2.0 * q * x[0]; };
    sp.f2 = [](double, ConstVec a) { return r * a[0] * a[0]; };
    sp.g = [](ConstVec x) { return qT * x[0] * x[0]; };
    sp.g_grad_x = [](ConstVec x, MutVec out) { out[0] = 2.0 * qT * x[0]; };
    return sp;
}

/// Strong coupling: a cheap control acting on a terminal cost makes the
/// unpenalised argmin jump between the ends of the action grid.
inline StructuredProblem msa_stress_structured() {
    StructuredProblem sp;
    sp.name = "msa_stress";
    sp.horizon = 1.0;
    sp.initial_state = {1.0};
    sp.action_space = ActionSpace::uniform_grid(-3.0, 3.0, 13);
    sp.b1 = [](double, MutVec out) { out[0] = 0.0; };
    sp.b2 = [](double, ConstVec a, MutVec out) { out[0] = a[0]; };
    sp.sigma1 = [](double, MutVec out) { out[0] = 0.0; };
    sp.sigma2 = [](double, ConstVec, MutVec out) { out[0] = 0.2; };
    sp.f1 = [](double, ConstVec) { return 0.0; };
    sp.f1_grad_x = [](double, ConstVec, MutVec out) { out[0] = 0.0; };
    sp.f2 = [](double, ConstVec a) { return 0.05 * a[0] * a[0]; };
    sp.g = [](ConstVec x) { return x[0] * x[0]; };
    sp.g_grad_x = [](ConstVec x, MutVec out) { out[0] = 2.0 * x[0]; };
    return sp;
}

}  // namespace detail

inline Benchmark make_benchmark(const std::string& name) {
    Benchmark b;
    if (name == "lq_drift") {
        const LqSpec s = detail::lq_drift_spec();
        b.problem = lq_structured(name, s, ActionSpace::uniform_grid(-2.0, 0.5, 21)).to_control_problem();
        b.lq = s;
    } else if (name == "lq_drift_small") {
        const LqSpec s = detail::lq_drift_spec();
        b.problem = lq_structured(name, s, ActionSpace::uniform_grid(-1.0, 1.0, 3)).to_control_problem();
        b.lq = s;
        b.n_steps = 5;
        b.n_paths = 2000;
        b.mode = ControlMode::deterministic;
    } else if (name == "ctrl_diffusion") {
        b.problem = detail::ctrl_diffusion_structured(name, ActionSpace::uniform_grid(-2.0, 1.0, 13))
                        .to_control_problem();
    } else if (name == "ctrl_diffusion_small") {
        b.problem = detail::ctrl_diffusion_structured(name, ActionSpace::uniform_grid(-1.0, 1.0, 3))
                        .to_control_problem();
        b.n_steps = 5;
        b.n_paths = 2000;
        b.mode = ControlMode::deterministic;
    } else if (name == "msa_stress") {
        b.problem = detail::msa_stress_structured().to_control_problem();
    } else if (name == "lq_drift_bad_gradient") {
        // lq_drift with the running-cost gradient off by a factor of two.
        const LqSpec s = detail::lq_drift_spec();
        b.problem = lq_structured(name, s, ActionSpace::uniform_grid(-2.0, 0.5, 21)).to_control_problem();
        b.problem.running_cost_grad_x = [](double, ConstVec x, ConstVec, MutVec out) { out[0] = 4.0 * x[0]; };
        b.lq = s;
    } else {
        throw InvalidArgument("unknown problem '" + name + "'");
    }
    return b;
}

/// Every name `make_benchmark` accepts.
inline std::vector<std::string> registered_problems() {
    return {"lq_drift",   "lq_drift_small",       "ctrl_diffusion", "ctrl_diffusion_small",
            "msa_stress", "lq_drift_bad_gradient"};
}

/// The acceptance suite at default scale.
inline std::vector<Benchmark> benchmark_suite() {
    std::vector<Benchmark> out;
    for (const char* n : {"lq_drift", "ctrl_diffusion", "msa_stress"}) out.push_back(make_benchmark(n));
    return out;
}

}  // namespace mmsa
