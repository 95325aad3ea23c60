#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmsa/control.hpp"
#include "mmsa/error.hpp"
#include "mmsa/parallel.hpp"
#include "mmsa/problem.hpp"
#include "mmsa/sde.hpp"

namespace mmsa {

/// Polynomial basis of total degree <= `degree` in the state. The ridge
/// penalty applied to the normal equations is `ridge * M`; the intercept is
/// not penalised.
struct RegressionBasis {
    std::size_t degree = 2;
    double ridge = 1e-8;
};

/// C(d + p, p): number of monomials of total degree <= p in d variables.
inline std::size_t basis_size(std::size_t dim, std::size_t degree) {
    std::size_t n = 1;
    for (std::size_t k = 1; k <= degree; ++k) n = n * (dim + k) / k;
    return n;
}

/// (Y, Z) along every path. Y is M x (N+1) x d, Z is M x N x d x d'.
/// `y_se` / `z_se` hold per-step standard errors of the regressed values
/// (residual variance times basis size over M).
class AdjointEnsemble {
public:
    AdjointEnsemble() = default;
    AdjointEnsemble(std::size_t n_paths, std::size_t n_steps, std::size_t dim,
                    std::size_t noise_dim)
        : n_paths_(n_paths),
          n_steps_(n_steps),
          dim_(dim),
          noise_dim_(noise_dim),
          y_(detail::allocate<double>(
              detail::checked_product({n_paths, n_steps + 1, dim}, "adjoint Y"), "adjoint Y")),
          z_(detail::allocate<double>(
              detail::checked_product({n_paths, n_steps, dim, noise_dim}, "adjoint Z"),
              "adjoint Z")),
          y_se_(n_steps * dim, 0.0),
          z_se_(n_steps * dim * noise_dim, 0.0) {}

    std::size_t n_paths() const { return n_paths_; }
    std::size_t n_steps() const { return n_steps_; }
    std::size_t dim() const { return dim_; }
    std::size_t noise_dim() const { return noise_dim_; }

    ConstVec y(std::size_t path, std::size_t node) const {
        return {y_.data() + (path * (n_steps_ + 1) + node) * dim_, dim_};
    }
    MutVec y(std::size_t path, std::size_t node) {
        return {y_.data() + (path * (n_steps_ + 1) + node) * dim_, dim_};
    }
    ConstVec z(std::size_t path, std::size_t step) const {
        const std::size_t w = dim_ * noise_dim_;
        return {z_.data() + (path * n_steps_ + step) * w, w};
    }
    MutVec z(std::size_t path, std::size_t step) {
        const std::size_t w = dim_ * noise_dim_;
        return {z_.data() + (path * n_steps_ + step) * w, w};
    }
    ConstVec y_se(std::size_t step) const { return {y_se_.data() + step * dim_, dim_}; }
    MutVec y_se(std::size_t step) { return {y_se_.data() + step * dim_, dim_}; }
    ConstVec z_se(std::size_t step) const {
        const std::size_t w = dim_ * noise_dim_;
        return {z_se_.data() + step * w, w};
    }
    MutVec z_se(std::size_t step) {
        const std::size_t w = dim_ * noise_dim_;
        return {z_se_.data() + step * w, w};
    }

    /// Path average of Y at `node`.
    std::vector<double> mean_y(std::size_t node) const {
        std::vector<double> m(dim_, 0.0);
        for (std::size_t i = 0; i < n_paths_; ++i)
            for (std::size_t j = 0; j < dim_; ++j) m[j] += y(i, node)[j];
        for (double& v : m) v /= static_cast<double>(n_paths_);
        return m;
    }

    friend bool operator==(const AdjointEnsemble&, const AdjointEnsemble&) = default;

private:
    std::size_t n_paths_ = 0, n_steps_ = 0, dim_ = 0, noise_dim_ = 0;
    std::vector<double> y_, z_, y_se_, z_se_;
};

/// Least-squares projection onto polynomials of the state at one node.
/// Coordinates are standardised; those with no spread across paths are
/// dropped from the basis, monomial columns are centred so the intercept is
/// the target mean.
class StateRegression {
public:
    StateRegression(const StateEnsemble& states, std::size_t node, const RegressionBasis& basis) {
        const std::size_t M = states.n_paths(), d = states.dim();
        if (basis.ridge < 0.0) throw RegressionError("ridge must be nonnegative");
        const std::size_t nominal = basis_size(d, basis.degree);
        if (nominal * 10 > M)
            throw RegressionError("basis of " + std::to_string(nominal) + " functions needs at least " +
                                  std::to_string(nominal * 10) + " paths, have " +
                                  std::to_string(M));

        std::vector<double> mean(d, 0.0), sd(d, 0.0);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t c = 0; c < d; ++c) mean[c] += states.at(i, node)[c];
        for (double& v : mean) v /= static_cast<double>(M);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t c = 0; c < d; ++c) {
                const double e = states.at(i, node)[c] - mean[c];
                sd[c] += e * e;
            }
        std::vector<std::size_t> active;
        for (std::size_t c = 0; c < d; ++c) {
            sd[c] = std::sqrt(sd[c] / static_cast<double>(M));
            if (sd[c] > 1e-12 * std::max(1.0, std::abs(mean[c]))) active.push_back(c);
        }

        const auto exps = monomials(active.size(), basis.degree);
        const std::size_t P = exps.size();
        features_.resize(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(P));
        std::vector<double> u(active.size());
        for (std::size_t i = 0; i < M; ++i) {
            const auto x = states.at(i, node);
            for (std::size_t c = 0; c < active.size(); ++c)
                u[c] = (x[active[c]] - mean[active[c]]) / sd[active[c]];
            for (std::size_t q = 0; q < P; ++q) {
                double v = 1.0;
                for (std::size_t c = 0; c < active.size(); ++c)
                    for (unsigned e = 0; e < exps[q][c]; ++e) v *= u[c];
                features_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q)) = v;
            }
        }
        if (P > 0) {
            const Eigen::RowVectorXd col_mean = features_.colwise().mean();
            features_.rowwise() -= col_mean;
            Eigen::MatrixXd gram = features_.transpose() * features_;
            gram.diagonal().array() += basis.ridge * static_cast<double>(M);
            ldlt_.compute(gram);
            if (ldlt_.info() != Eigen::Success || !ldlt_.isPositive() || ldlt_.rcond() < 1e-13)
                throw RegressionError("rank-deficient regression at step " +
                                      std::to_string(node) + " (basis of " +
                                      std::to_string(P + 1) + " functions)");
        }
    }

    /// Effective number of basis functions including the intercept.
    std::size_t size() const { return static_cast<std::size_t>(features_.cols()) + 1; }

    /// Fitted values for each target column and the residual variance of each.
    void fit(const Eigen::MatrixXd& targets, Eigen::MatrixXd& fitted,
             Eigen::VectorXd& residual_var) const {
        const Eigen::Index M = targets.rows();
        const Eigen::RowVectorXd mean = targets.colwise().mean();
        fitted = mean.replicate(M, 1);
        if (features_.cols() > 0) {
            const Eigen::MatrixXd centred = targets.rowwise() - mean;
            const Eigen::MatrixXd coef = ldlt_.solve(features_.transpose() * centred);
            fitted += features_ * coef;
        }
        const double dof = std::max<double>(1.0, static_cast<double>(M) - static_cast<double>(size()));
        residual_var = (targets - fitted).colwise().squaredNorm().transpose() / dof;
    }

private:
    /// Exponent vectors of total degree 1..p over n variables, graded order.
    static std::vector<std::vector<unsigned>> monomials(std::size_t n, std::size_t p) {
        std::vector<std::vector<unsigned>> out;
        if (n == 0) return out;
        std::vector<unsigned> e(n, 0);
        for (std::size_t deg = 1; deg <= p; ++deg) {
            // Enumerate compositions of deg into n parts.
            std::function<void(std::size_t, unsigned)> rec = [&](std::size_t pos, unsigned left) {
                if (pos + 1 == n) {
                    e[pos] = left;
                    out.push_back(e);
                    return;
                }
                for (unsigned v = left + 1; v-- > 0;) {
                    e[pos] = v;
                    rec(pos + 1, left - v);
                }
            };
            rec(0, static_cast<unsigned>(deg));
        }
        return out;
    }

    Eigen::MatrixXd features_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

namespace detail {

inline void require_path_shapes(const ControlProblem& p, const TimeGrid& grid,
                                const NoiseBank& noise, const StateEnsemble& states,
                                const ControlEnsemble& control) {
    require_noise_shape(p, grid, noise);
    if (states.n_paths() != noise.n_paths() || states.n_steps() != grid.n_steps() ||
        states.dim() != p.state_dim)
        throw InvalidArgument("state ensemble shape does not match noise / grid / problem");
    control.require_compatible(states.n_paths(), grid.n_steps(), p.action_space.size());
}

}  // namespace detail

/// Backward sweep of the adjoint BSDE by least-squares Monte Carlo:
///   Y_N = D_x g(X_N)
///   Yhat_k = E[Y_{k+1} | X_k]
///   Z_k = E[(Y_{k+1} - Yhat_k) dW_k^T | X_k] / dt
///   Y_k = Yhat_k + dt D_x H(t_k, X_k, Yhat_k, Z_k, a_k)
inline AdjointEnsemble solve_adjoint_lsmc(const ControlProblem& p, const TimeGrid& grid,
                                          const NoiseBank& noise, const StateEnsemble& states,
                                          const ControlEnsemble& control,
                                          const RegressionBasis& basis = {},
                                          const Execution& exec = {}) {
    detail::require_path_shapes(p, grid, noise, states, control);
    const std::size_t M = states.n_paths(), N = grid.n_steps();
    const std::size_t d = p.state_dim, dp = p.noise_dim, w = d * dp;
    const double dt = grid.dt();
    AdjointEnsemble adj(M, N, d, dp);

    parallel_for(M, exec, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto yN = adj.y(i, N);
            p.terminal_cost_grad_x(states.at(i, N), yN);
            detail::require_finite(ConstVec(yN), "terminal_cost_grad_x");
        }
    });

    Eigen::MatrixXd ty(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(d));
    Eigen::MatrixXd tz(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(w));
    Eigen::MatrixXd yhat, zfit;
    Eigen::VectorXd yvar, zvar;

    for (std::size_t k = N; k-- > 0;) {
        const StateRegression reg(states, k, basis);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < d; ++j)
                ty(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = adj.y(i, k + 1)[j];
        reg.fit(ty, yhat, yvar);
        for (std::size_t i = 0; i < M; ++i) {
            const auto dw = noise.increment(i, k);
            for (std::size_t j = 0; j < d; ++j) {
                const double r = ty(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) -
                                 yhat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                for (std::size_t q = 0; q < dp; ++q)
                    tz(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j * dp + q)) = r * dw[q];
            }
        }
        reg.fit(tz, zfit, zvar);
        zfit /= dt;

        const double scale = static_cast<double>(reg.size()) / static_cast<double>(M);
        for (std::size_t j = 0; j < d; ++j)
            adj.y_se(k)[j] = std::sqrt(yvar(static_cast<Eigen::Index>(j)) * scale);
        for (std::size_t q = 0; q < w; ++q)
            adj.z_se(k)[q] = std::sqrt(zvar(static_cast<Eigen::Index>(q)) * scale) / dt;

        const double t = grid.node(k);
        parallel_for(M, exec, [&](std::size_t begin, std::size_t end) {
            HamiltonianTerms terms(p);
            std::vector<double> yh(d);
            for (std::size_t i = begin; i < end; ++i) {
                const auto ii = static_cast<Eigen::Index>(i);
                for (std::size_t j = 0; j < d; ++j) yh[j] = yhat(ii, static_cast<Eigen::Index>(j));
                auto zk = adj.z(i, k);
                for (std::size_t q = 0; q < w; ++q) zk[q] = zfit(ii, static_cast<Eigen::Index>(q));
                terms.evaluate(p, t, states.at(i, k), yh, zk,
                               p.action_space.point(control.at(i, k)), true);
                auto yk = adj.y(i, k);
                for (std::size_t j = 0; j < d; ++j) {
                    yk[j] = yh[j] + dt * terms.grad_x()[j];
                    if (!std::isfinite(yk[j]))
                        throw RegressionError("non-finite adjoint on path " + std::to_string(i) +
                                              " at step " + std::to_string(k));
                }
            }
        });
    }
    return adj;
}

/// Discretised fundamental solution S of the linearised state equation and its
/// inverse, both M x (N+1) x d x d (row-major d x d blocks).
/// S_{k+1} = S_k (I + Jb^T dt + sum_p Jsigma_p^T dW^p), S_0 = I.
class FundamentalSolutionEnsemble {
public:
    FundamentalSolutionEnsemble(std::size_t n_paths, std::size_t n_steps, std::size_t dim)
        : n_paths_(n_paths),
          n_steps_(n_steps),
          dim_(dim),
          s_(detail::allocate<double>(
              detail::checked_product({n_paths, n_steps + 1, dim, dim}, "fundamental solution"),
              "fundamental solution")),
          s_inv_(s_.size()) {}

    std::size_t n_paths() const { return n_paths_; }
    std::size_t n_steps() const { return n_steps_; }
    std::size_t dim() const { return dim_; }

    ConstVec s(std::size_t path, std::size_t node) const { return block(s_, path, node); }
    MutVec s(std::size_t path, std::size_t node) { return block(s_, path, node); }
    ConstVec s_inverse(std::size_t path, std::size_t node) const {
        return block(s_inv_, path, node);
    }
    MutVec s_inverse(std::size_t path, std::size_t node) { return block(s_inv_, path, node); }

private:
    ConstVec block(const std::vector<double>& v, std::size_t path, std::size_t node) const {
        const std::size_t b = dim_ * dim_;
        return {v.data() + (path * (n_steps_ + 1) + node) * b, b};
    }
    MutVec block(std::vector<double>& v, std::size_t path, std::size_t node) {
        const std::size_t b = dim_ * dim_;
        return {v.data() + (path * (n_steps_ + 1) + node) * b, b};
    }

    std::size_t n_paths_, n_steps_, dim_;
    std::vector<double> s_, s_inv_;
};

namespace detail {

/// One multiplicative step S <- S (I + Jb^T dt + sum_p Jsigma_p^T dW^p).
/// `jb`, `js` are the problem's drift_jac_x / diffusion_jac_x layouts.
inline void fundamental_step(std::size_t d, std::size_t dp, double dt, ConstVec jb, ConstVec js,
                             ConstVec dw, std::vector<double>& factor, ConstVec s_in,
                             MutVec s_out) {
    for (std::size_t l = 0; l < d; ++l)
        for (std::size_t j = 0; j < d; ++j) {
            double v = (l == j ? 1.0 : 0.0) + jb[j * d + l] * dt;
            for (std::size_t q = 0; q < dp; ++q) v += js[(j * dp + q) * d + l] * dw[q];
            factor[l * d + j] = v;
        }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double v = 0.0;
            for (std::size_t l = 0; l < d; ++l) v += s_in[i * d + l] * factor[l * d + j];
            s_out[i * d + j] = v;
        }
}

}  // namespace detail

inline FundamentalSolutionEnsemble simulate_fundamental_solution(
    const ControlProblem& p, const TimeGrid& grid, const NoiseBank& noise,
    const StateEnsemble& states, const ControlEnsemble& control, const Execution& exec = {}) {
    detail::require_path_shapes(p, grid, noise, states, control);
    const std::size_t M = states.n_paths(), N = grid.n_steps(), d = p.state_dim, dp = p.noise_dim;
    const double dt = grid.dt();
    FundamentalSolutionEnsemble fs(M, N, d);
    parallel_for(M, exec, [&](std::size_t begin, std::size_t end) {
        std::vector<double> jb(d * d), js(d * dp * d), factor(d * d);
        for (std::size_t i = begin; i < end; ++i) {
            auto s0 = fs.s(i, 0);
            for (std::size_t q = 0; q < d * d; ++q) s0[q] = (q % (d + 1) == 0) ? 1.0 : 0.0;
            for (std::size_t k = 0; k < N; ++k) {
                const double t = grid.node(k);
                const auto a = p.action_space.point(control.at(i, k));
                p.drift_jac_x(t, states.at(i, k), a, jb);
                p.diffusion_jac_x(t, states.at(i, k), a, js);
                detail::fundamental_step(d, dp, dt, jb, js, noise.increment(i, k), factor,
                                         fs.s(i, k), fs.s(i, k + 1));
                for (double v : fs.s(i, k + 1))
                    if (!std::isfinite(v))
                        throw SimulationError("non-finite fundamental solution on path " +
                                              std::to_string(i) + " at step " +
                                              std::to_string(k + 1));
            }
            for (std::size_t k = 0; k <= N; ++k) {
                Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
                    sm(fs.s(i, k).data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
                Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> inv(
                    fs.s_inverse(i, k).data(), static_cast<Eigen::Index>(d),
                    static_cast<Eigen::Index>(d));
                inv = sm.inverse();
            }
        }
    });
    return fs;
}

/// Y_0 estimate with its per-component standard error.
struct VectorEstimate {
    std::vector<double> value;
    std::vector<double> standard_error;
};

/// Plain Monte-Carlo estimate of
///   Y_0 = E[S_N D_x g(X_N) + sum_k S_k D_x f(t_k, X_k, a_k) dt]
/// from the linear representation of the adjoint (S_0 = I, so no conditional
/// expectation is needed). Independent of the regression path.
inline VectorEstimate solve_adjoint_linear_y0(const ControlProblem& p, const TimeGrid& grid,
                                              const NoiseBank& noise, const StateEnsemble& states,
                                              const ControlEnsemble& control,
                                              const Execution& exec = {}) {
    detail::require_path_shapes(p, grid, noise, states, control);
    const std::size_t M = states.n_paths(), N = grid.n_steps(), d = p.state_dim, dp = p.noise_dim;
    const double dt = grid.dt();
    std::vector<double> samples(M * d);
    parallel_for(M, exec, [&](std::size_t begin, std::size_t end) {
        std::vector<double> jb(d * d), js(d * dp * d), factor(d * d), gf(d), gg(d);
        std::vector<double> s(d * d), s_next(d * d), acc(d);
        for (std::size_t i = begin; i < end; ++i) {
            std::fill(s.begin(), s.end(), 0.0);
            for (std::size_t j = 0; j < d; ++j) s[j * d + j] = 1.0;
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t k = 0; k < N; ++k) {
                const double t = grid.node(k);
                const auto x = states.at(i, k);
                const auto a = p.action_space.point(control.at(i, k));
                p.running_cost_grad_x(t, x, a, gf);
                for (std::size_t r = 0; r < d; ++r) {
                    double v = 0.0;
                    for (std::size_t c = 0; c < d; ++c) v += s[r * d + c] * gf[c];
                    acc[r] += v * dt;
                }
                p.drift_jac_x(t, x, a, jb);
                p.diffusion_jac_x(t, x, a, js);
                detail::fundamental_step(d, dp, dt, jb, js, noise.increment(i, k), factor, s, s_next);
                std::swap(s, s_next);
            }
            p.terminal_cost_grad_x(states.at(i, N), gg);
            for (std::size_t r = 0; r < d; ++r) {
                double v = acc[r];
                for (std::size_t c = 0; c < d; ++c) v += s[r * d + c] * gg[c];
                if (!std::isfinite(v))
                    throw SimulationError("non-finite fundamental solution on path " +
                                          std::to_string(i));
                samples[i * d + r] = v;
            }
        }
    });
    VectorEstimate est{std::vector<double>(d), std::vector<double>(d)};
    std::vector<double> column(M);
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t i = 0; i < M; ++i) column[i] = samples[i * d + r];
        const Estimate e = mean_and_se(column);
        est.value[r] = e.value;
        est.standard_error[r] = e.standard_error;
    }
    return est;
}

/// Mean-square one-step residual of the discrete BSDE,
///   E sum_k |Y_{k+1} - Y_k + dt D_x H(t_k, X_k, Y_k, Z_k, a_k) - Z_k dW_k|^2 / N.
inline double adjoint_residual(const ControlProblem& p, const TimeGrid& grid,
                               const NoiseBank& noise, const StateEnsemble& states,
                               const ControlEnsemble& control, const AdjointEnsemble& adj,
                               const Execution& exec = {}) {
    detail::require_path_shapes(p, grid, noise, states, control);
    const std::size_t M = states.n_paths(), N = grid.n_steps(), d = p.state_dim, dp = p.noise_dim;
    const double dt = grid.dt();
    std::vector<double> per_path(M);
    parallel_for(M, exec, [&](std::size_t begin, std::size_t end) {
        HamiltonianTerms terms(p);
        for (std::size_t i = begin; i < end; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < N; ++k) {
                const auto yk = adj.y(i, k), yk1 = adj.y(i, k + 1), zk = adj.z(i, k);
                const auto dw = noise.increment(i, k);
                terms.evaluate(p, grid.node(k), states.at(i, k), yk, zk,
                               p.action_space.point(control.at(i, k)), true);
                for (std::size_t j = 0; j < d; ++j) {
                    double r = yk1[j] - yk[j] + dt * terms.grad_x()[j];
                    for (std::size_t q = 0; q < dp; ++q) r -= zk[j * dp + q] * dw[q];
                    s += r * r;
                }
            }
            per_path[i] = s / static_cast<double>(N);
        }
    });
    return mean_and_se(per_path).value;
}

}  // namespace mmsa
