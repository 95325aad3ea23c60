#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <new>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmsa/control.hpp"
#include "mmsa/error.hpp"
#include "mmsa/parallel.hpp"
#include "mmsa/problem.hpp"

namespace mmsa {

/// Uniform grid t_k = k T / N on [0, T].
class TimeGrid {
public:
    TimeGrid(std::size_t n_steps, double horizon) : n_steps_(n_steps), horizon_(horizon) {
        if (n_steps == 0) throw InvalidArgument("time grid needs at least one step");
        if (!(horizon > 0.0) || !std::isfinite(horizon))
            throw InvalidArgument("time grid horizon must be positive and finite");
    }

    std::size_t n_steps() const { return n_steps_; }
    double horizon() const { return horizon_; }
    double dt() const { return horizon_ / static_cast<double>(n_steps_); }

    double node(std::size_t k) const {
        if (k >= n_steps_) return horizon_;
        return horizon_ * static_cast<double>(k) / static_cast<double>(n_steps_);
    }

private:
    std::size_t n_steps_;
    double horizon_;
};

namespace detail {

inline std::size_t checked_product(std::initializer_list<std::size_t> dims, const char* what) {
    std::size_t n = 1;
    for (std::size_t v : dims) {
        if (v != 0 && n > std::numeric_limits<std::size_t>::max() / v)
            throw ResourceError(std::string(what) + ": size overflows");
        n *= v;
    }
    // 2^31 doubles is 16 GiB; anything larger is a configuration mistake.
    if (n > (std::size_t{1} << 31))
        throw ResourceError(std::string(what) + ": " + std::to_string(n) +
                            " elements requested, limit is 2^31");
    return n;
}

template <class T>
std::vector<T> allocate(std::size_t n, const char* what) {
    try {
        return std::vector<T>(n);
    } catch (const std::bad_alloc&) {
        throw ResourceError(std::string(what) + ": cannot allocate " + std::to_string(n) +
                            " elements");
    }
}

}  // namespace detail

/// Frozen Brownian increments, M paths x N steps x d' components. Path i is
/// drawn from its own generator seeded by (seed, i).
class NoiseBank {
public:
    NoiseBank() = default;
    NoiseBank(std::size_t n_paths, std::size_t n_steps, std::size_t noise_dim, std::uint64_t seed,
              std::vector<double> increments)
        : n_paths_(n_paths),
          n_steps_(n_steps),
          noise_dim_(noise_dim),
          seed_(seed),
          increments_(std::move(increments)) {}

    std::size_t n_paths() const { return n_paths_; }
    std::size_t n_steps() const { return n_steps_; }
    std::size_t noise_dim() const { return noise_dim_; }
    std::uint64_t seed() const { return seed_; }

    ConstVec increment(std::size_t path, std::size_t step) const {
        return {increments_.data() + (path * n_steps_ + step) * noise_dim_, noise_dim_};
    }
    std::span<const double> data() const { return increments_; }

private:
    std::size_t n_paths_ = 0, n_steps_ = 0, noise_dim_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<double> increments_;
};

/// Independent generator for path `path` of a bank with master `seed`.
inline std::mt19937_64 path_generator(std::uint64_t seed, std::uint64_t path) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32)};
    return std::mt19937_64(seq);
}

inline NoiseBank make_noise(const TimeGrid& grid, std::size_t n_paths, std::size_t noise_dim,
                            std::uint64_t seed, const Execution& exec = {}) {
    if (n_paths == 0) throw InvalidArgument("make_noise: n_paths must be >= 1");
    if (noise_dim == 0) throw InvalidArgument("make_noise: noise_dim must be >= 1");
    const std::size_t n_steps = grid.n_steps();
    const std::size_t total =
        detail::checked_product({n_paths, n_steps, noise_dim}, "noise bank");
    auto inc = detail::allocate<double>(total, "noise bank");
    const double sd = std::sqrt(grid.dt());
    parallel_for(n_paths, exec, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto gen = path_generator(seed, i);
            std::normal_distribution<double> normal(0.0, sd);
            double* out = inc.data() + i * n_steps * noise_dim;
            for (std::size_t q = 0; q < n_steps * noise_dim; ++q) out[q] = normal(gen);
        }
    });
    return NoiseBank(n_paths, n_steps, noise_dim, seed, std::move(inc));
}

/// X at every node of every path, M x (N+1) x d.
class StateEnsemble {
public:
    StateEnsemble() = default;
    StateEnsemble(std::size_t n_paths, std::size_t n_steps, std::size_t dim)
        : n_paths_(n_paths),
          n_steps_(n_steps),
          dim_(dim),
          values_(detail::allocate<double>(
              detail::checked_product({n_paths, n_steps + 1, dim}, "state ensemble"),
              "state ensemble")) {}

    std::size_t n_paths() const { return n_paths_; }
    std::size_t n_steps() const { return n_steps_; }
    std::size_t dim() const { return dim_; }

    ConstVec at(std::size_t path, std::size_t node) const {
        return {values_.data() + (path * (n_steps_ + 1) + node) * dim_, dim_};
    }
    MutVec at(std::size_t path, std::size_t node) {
        return {values_.data() + (path * (n_steps_ + 1) + node) * dim_, dim_};
    }
    std::span<const double> data() const { return values_; }

    friend bool operator==(const StateEnsemble&, const StateEnsemble&) = default;

private:
    std::size_t n_paths_ = 0, n_steps_ = 0, dim_ = 0;
    std::vector<double> values_;
};

namespace detail {

inline void require_noise_shape(const ControlProblem& p, const TimeGrid& grid,
                                const NoiseBank& noise) {
    if (noise.n_steps() != grid.n_steps() || noise.noise_dim() != p.noise_dim)
        throw InvalidArgument("noise bank shape does not match grid / problem");
}

/// One Euler-Maruyama step x_next = x + b dt + sigma dW; returns false if the
/// result is not finite.
inline bool euler_step(const ControlProblem& p, double t, double dt, ConstVec x, ConstVec a,
                       ConstVec dw, MutVec drift, MutVec diff, MutVec x_next) {
    const std::size_t d = p.state_dim, dp = p.noise_dim;
    p.drift(t, x, a, drift);
    p.diffusion(t, x, a, diff);
    bool finite = true;
    for (std::size_t j = 0; j < d; ++j) {
        double v = x[j] + drift[j] * dt;
        for (std::size_t q = 0; q < dp; ++q) v += diff[j * dp + q] * dw[q];
        x_next[j] = v;
        finite = finite && std::isfinite(v);
    }
    return finite;
}

}  // namespace detail

/// Euler-Maruyama paths of the controlled SDE driven by the frozen noise.
inline StateEnsemble simulate_forward(const ControlProblem& p, const TimeGrid& grid,
                                      const NoiseBank& noise, const ControlEnsemble& control,
                                      const Execution& exec = {}) {
    detail::require_noise_shape(p, grid, noise);
    const std::size_t M = noise.n_paths(), N = grid.n_steps(), d = p.state_dim;
    control.require_compatible(M, N, p.action_space.size());
    StateEnsemble states(M, N, d);
    const double dt = grid.dt();
    parallel_for(M, exec, [&](std::size_t begin, std::size_t end) {
        std::vector<double> drift(d), diff(d * p.noise_dim);
        for (std::size_t i = begin; i < end; ++i) {
            auto x0 = states.at(i, 0);
            std::copy(p.initial_state.begin(), p.initial_state.end(), x0.begin());
            for (std::size_t k = 0; k < N; ++k) {
                const auto a = p.action_space.point(control.at(i, k));
                if (!detail::euler_step(p, grid.node(k), dt, states.at(i, k), a,
                                        noise.increment(i, k), drift, diff, states.at(i, k + 1)))
                    throw SimulationError("non-finite state on path " + std::to_string(i) +
                                          " at step " + std::to_string(k + 1));
            }
        }
    });
    return states;
}

/// Markov policy: action index as a function of (step, t, x).
using FeedbackPolicy = std::function<std::size_t(std::size_t step, double t, ConstVec x)>;

struct FeedbackRun {
    StateEnsemble states;
    ControlEnsemble control;
};

/// Simulates under a closed-loop policy and records the realised per-path
/// control, so the result can be fed to the open-loop solvers.
inline FeedbackRun simulate_feedback(const ControlProblem& p, const TimeGrid& grid,
                                     const NoiseBank& noise, const FeedbackPolicy& policy,
                                     const Execution& exec = {}) {
    detail::require_noise_shape(p, grid, noise);
    const std::size_t M = noise.n_paths(), N = grid.n_steps(), d = p.state_dim;
    FeedbackRun run{StateEnsemble(M, N, d), ControlEnsemble(M, N, ControlMode::per_path)};
    const double dt = grid.dt();
    parallel_for(M, exec, [&](std::size_t begin, std::size_t end) {
        std::vector<double> drift(d), diff(d * p.noise_dim);
        for (std::size_t i = begin; i < end; ++i) {
            auto x0 = run.states.at(i, 0);
            std::copy(p.initial_state.begin(), p.initial_state.end(), x0.begin());
            for (std::size_t k = 0; k < N; ++k) {
                const double t = grid.node(k);
                const std::size_t idx = policy(k, t, run.states.at(i, k));
                if (idx >= p.action_space.size())
                    throw InvalidArgument("feedback policy returned an invalid action index");
                run.control.set(i, k, static_cast<ControlEnsemble::Index>(idx));
                if (!detail::euler_step(p, t, dt, run.states.at(i, k), p.action_space.point(idx),
                                        noise.increment(i, k), drift, diff,
                                        run.states.at(i, k + 1)))
                    throw SimulationError("non-finite state on path " + std::to_string(i) +
                                          " at step " + std::to_string(k + 1));
            }
        }
    });
    return run;
}

/// Sample mean with its standard error.
struct Estimate {
    double value = 0.0;
    double standard_error = 0.0;
};

/// Mean and standard error of `xs`, summed in index order.
inline Estimate mean_and_se(std::span<const double> xs) {
    const std::size_t n = xs.size();
    if (n == 0) return {};
    double s = 0.0;
    for (double v : xs) s += v;
    const double mean = s / static_cast<double>(n);
    if (n == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double v : xs) ss += (v - mean) * (v - mean);
    const double var = ss / static_cast<double>(n - 1);
    return {mean, std::sqrt(var / static_cast<double>(n))};
}

/// Per-path cost sum_k f(t_k, X_k, a_k) dt + g(X_N).
inline std::vector<double> path_costs(const ControlProblem& p, const TimeGrid& grid,
                                      const StateEnsemble& states, const ControlEnsemble& control,
                                      const Execution& exec = {}) {
    const std::size_t M = states.n_paths(), N = grid.n_steps();
    if (states.n_steps() != N || states.dim() != p.state_dim)
        throw InvalidArgument("estimate_cost: state ensemble shape mismatch");
    control.require_compatible(M, N, p.action_space.size());
    std::vector<double> cost(M);
    const double dt = grid.dt();
    parallel_for(M, exec, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double running = 0.0;
            for (std::size_t k = 0; k < N; ++k)
                running += p.running_cost(grid.node(k), states.at(i, k),
                                          p.action_space.point(control.at(i, k)));
            const double c = running * dt + p.terminal_cost(states.at(i, N));
            if (!std::isfinite(c))
                throw EvaluationError("non-finite cost on path " + std::to_string(i));
            cost[i] = c;
        }
    });
    return cost;
}

/// Monte-Carlo estimate of J with left-endpoint quadrature of the running cost.
inline Estimate estimate_cost(const ControlProblem& p, const TimeGrid& grid,
                              const StateEnsemble& states, const ControlEnsemble& control,
                              const Execution& exec = {}) {
    return mean_and_se(path_costs(p, grid, states, control, exec));
}

}  // namespace mmsa
