#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmsa/error.hpp"

namespace mmsa {

using ConstVec = std::span<const double>;
using MutVec = std::span<double>;

/// Finite set of admissible actions. Every point is an m-vector; the set is
/// stored row-major so `point(i)` is a view into contiguous memory.
class ActionSpace {
public:
    ActionSpace() = default;

    explicit ActionSpace(const std::vector<std::vector<double>>& points) {
        if (points.empty()) throw InvalidArgument("action space must be nonempty");
        dim_ = points.front().size();
        if (dim_ == 0) throw InvalidArgument("action points must have positive dimension");
        for (const auto& p : points) {
            if (p.size() != dim_)
                throw InvalidArgument("action points must share one dimension");
            for (double v : p)
                if (!std::isfinite(v)) throw InvalidArgument("action points must be finite");
            data_.insert(data_.end(), p.begin(), p.end());
        }
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t j = i + 1; j < size(); ++j)
                if (std::equal(point(i).begin(), point(i).end(), point(j).begin()))
                    throw InvalidArgument("action space contains duplicate point " +
                                          std::to_string(j));
    }

    /// Scalar actions `lo, lo + h, ..., hi` with `count` points.
    static ActionSpace uniform_grid(double lo, double hi, std::size_t count) {
        if (count == 0) throw InvalidArgument("action grid needs at least one point");
        std::vector<std::vector<double>> pts;
        pts.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            const double v =
                count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) /
                                           static_cast<double>(count - 1);
            pts.push_back({v});
        }
        return ActionSpace(pts);
    }

    std::size_t size() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
    std::size_t dim() const { return dim_; }
    bool empty() const { return data_.empty(); }

    ConstVec point(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

    /// Index of the point closest (Euclidean) to `target`; lowest index on ties.
    std::size_t nearest(ConstVec target) const {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < size(); ++i) {
            double d2 = 0.0;
            auto p = point(i);
            for (std::size_t c = 0; c < dim_; ++c) d2 += (p[c] - target[c]) * (p[c] - target[c]);
            if (d2 < best_d) {
                best_d = d2;
                best = i;
            }
        }
        return best;
    }

    /// Index of the point closest to the centroid of the set.
    std::size_t centroid_index() const {
        std::vector<double> c(dim_, 0.0);
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t k = 0; k < dim_; ++k) c[k] += point(i)[k];
        for (double& v : c) v /= static_cast<double>(size());
        return nearest(c);
    }

private:
    std::vector<double> data_;
    std::size_t dim_ = 0;
};

/// Controlled diffusion dX = b dt + sigma dW on [0, T] with running cost f and
/// terminal cost g, plus the x-derivatives the adjoint equation needs.
///
/// Layouts (all row-major, flattened):
///   diffusion        d x d'         sigma[j*d' + p]
///   drift_jac_x      d x d          [j*d + i]          = d b^j / d x_i
///   diffusion_jac_x  d x d' x d     [(j*d' + p)*d + i] = d sigma^{jp} / d x_i
struct ControlProblem {
    using VectorField = std::function<void(double t, ConstVec x, ConstVec a, MutVec out)>;
    using ScalarField = std::function<double(double t, ConstVec x, ConstVec a)>;
    using TerminalCost = std::function<double(ConstVec x)>;
    using TerminalGrad = std::function<void(ConstVec x, MutVec out)>;

    std::string name;
    std::size_t state_dim = 1;
    std::size_t noise_dim = 1;
    double horizon = 1.0;
    std::vector<double> initial_state;

    VectorField drift;
    VectorField diffusion;
    ScalarField running_cost;
    TerminalCost terminal_cost;

    VectorField drift_jac_x;
    VectorField diffusion_jac_x;
    VectorField running_cost_grad_x;
    TerminalGrad terminal_cost_grad_x;

    ActionSpace action_space;

    /// Constant K bounding the first derivatives. Informational only.
    std::optional<double> lipschitz_bound;

    std::size_t diffusion_size() const { return state_dim * noise_dim; }

    /// Throws InvalidArgument when a field is missing or inconsistent.
    void validate() const {
        if (state_dim == 0) throw InvalidArgument(name + ": state_dim must be positive");
        if (noise_dim == 0) throw InvalidArgument(name + ": noise_dim must be positive");
        if (!(horizon > 0.0) || !std::isfinite(horizon))
            throw InvalidArgument(name + ": horizon must be positive and finite");
        if (initial_state.size() != state_dim)
            throw InvalidArgument(name + ": initial_state has wrong length");
        for (double v : initial_state)
            if (!std::isfinite(v)) throw InvalidArgument(name + ": initial_state must be finite");
        const std::pair<bool, const char*> fields[] = {
            {static_cast<bool>(drift), "drift"},
            {static_cast<bool>(diffusion), "diffusion"},
            {static_cast<bool>(running_cost), "running_cost"},
            {static_cast<bool>(terminal_cost), "terminal_cost"},
            {static_cast<bool>(drift_jac_x), "drift_jac_x"},
            {static_cast<bool>(diffusion_jac_x), "diffusion_jac_x"},
            {static_cast<bool>(running_cost_grad_x), "running_cost_grad_x"},
            {static_cast<bool>(terminal_cost_grad_x), "terminal_cost_grad_x"},
        };
        for (const auto& [set, field] : fields)
            if (!set) throw InvalidArgument(name + ": missing coefficient " + field);
        if (action_space.empty()) throw InvalidArgument(name + ": action space is empty");
    }
};

namespace detail {

inline void require_finite(ConstVec v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x))
            throw EvaluationError(std::string("non-finite value returned by ") + what);
}

inline void require_finite(double v, const char* what) {
    if (!std::isfinite(v))
        throw EvaluationError(std::string("non-finite value returned by ") + what);
}

}  // namespace detail

/// Coefficients and Hamiltonian pieces evaluated at one (t, x, y, z, a).
/// Reusable scratch: construct once per worker, then call `evaluate`.
class HamiltonianTerms {
public:
    explicit HamiltonianTerms(const ControlProblem& p)
        : d_(p.state_dim),
          dp_(p.noise_dim),
          drift_(d_),
          diffusion_(d_ * dp_),
          grad_x_(d_),
          drift_jac_(d_ * d_),
          diffusion_jac_(d_ * dp_ * d_),
          cost_grad_(d_) {}

    /// Fills b, sigma, f, H and, when `with_gradient`, D_x H.
    void evaluate(const ControlProblem& p, double t, ConstVec x, ConstVec y, ConstVec z,
                  ConstVec a, bool with_gradient = true) {
        p.drift(t, x, a, drift_);
        detail::require_finite(drift_, "drift");
        p.diffusion(t, x, a, diffusion_);
        detail::require_finite(diffusion_, "diffusion");
        running_cost_ = p.running_cost(t, x, a);
        detail::require_finite(running_cost_, "running_cost");

        double h = 0.0;
        for (std::size_t j = 0; j < d_; ++j) h += drift_[j] * y[j];
        for (std::size_t q = 0; q < d_ * dp_; ++q) h += diffusion_[q] * z[q];
        h += running_cost_;
        hamiltonian_ = h;

        has_gradient_ = with_gradient;
        if (with_gradient) evaluate_gradient(p, t, x, y, z, a);
    }

    double hamiltonian() const { return hamiltonian_; }
    double running_cost() const { return running_cost_; }
    ConstVec drift() const { return drift_; }
    ConstVec diffusion() const { return diffusion_; }
    ConstVec grad_x() const { return grad_x_; }
    bool has_gradient() const { return has_gradient_; }

    /// Sum of the three squared differences weighted by rho/2 in the
    /// augmented Hamiltonian. Both terms must carry gradients.
    double penalty_sq(const HamiltonianTerms& other) const {
        double s = 0.0;
        for (std::size_t j = 0; j < d_; ++j) {
            const double e = drift_[j] - other.drift_[j];
            s += e * e;
        }
        for (std::size_t q = 0; q < d_ * dp_; ++q) {
            const double e = diffusion_[q] - other.diffusion_[q];
            s += e * e;
        }
        for (std::size_t i = 0; i < d_; ++i) {
            const double e = grad_x_[i] - other.grad_x_[i];
            s += e * e;
        }
        return s;
    }

private:
    void evaluate_gradient(const ControlProblem& p, double t, ConstVec x, ConstVec y,
                           ConstVec z, ConstVec a) {
        p.drift_jac_x(t, x, a, drift_jac_);
        detail::require_finite(drift_jac_, "drift_jac_x");
        p.diffusion_jac_x(t, x, a, diffusion_jac_);
        detail::require_finite(diffusion_jac_, "diffusion_jac_x");
        p.running_cost_grad_x(t, x, a, cost_grad_);
        detail::require_finite(cost_grad_, "running_cost_grad_x");
        for (std::size_t i = 0; i < d_; ++i) {
            double g = 0.0;
            for (std::size_t j = 0; j < d_; ++j) g += drift_jac_[j * d_ + i] * y[j];
            for (std::size_t q = 0; q < d_ * dp_; ++q) g += diffusion_jac_[q * d_ + i] * z[q];
            grad_x_[i] = g + cost_grad_[i];
        }
    }

    std::size_t d_, dp_;
    std::vector<double> drift_, diffusion_, grad_x_;
    std::vector<double> drift_jac_, diffusion_jac_, cost_grad_;
    double running_cost_ = 0.0;
    double hamiltonian_ = 0.0;
    bool has_gradient_ = false;
};

/// Augmented Hamiltonian from pre-evaluated terms: H(a) + rho/2 * penalty.
/// With rho == 0 the result is H(a) bit for bit.
inline double augmented_from_terms(const HamiltonianTerms& candidate,
                                   const HamiltonianTerms& previous, double rho) {
    if (rho == 0.0) return candidate.hamiltonian();
    return candidate.hamiltonian() + 0.5 * rho * candidate.penalty_sq(previous);
}

/// H(t,x,y,z,a) = b.y + tr(sigma^T z) + f.
inline double hamiltonian(const ControlProblem& p, double t, ConstVec x, ConstVec y, ConstVec z,
                          ConstVec a) {
    HamiltonianTerms terms(p);
    terms.evaluate(p, t, x, y, z, a, false);
    return terms.hamiltonian();
}

/// D_x H, component i = sum_j d_i b^j y^j + sum_{j,p} d_i sigma^{jp} z^{jp} + d_i f.
inline std::vector<double> hamiltonian_grad_x(const ControlProblem& p, double t, ConstVec x,
                                              ConstVec y, ConstVec z, ConstVec a) {
    HamiltonianTerms terms(p);
    terms.evaluate(p, t, x, y, z, a, true);
    return {terms.grad_x().begin(), terms.grad_x().end()};
}

inline double augmented_hamiltonian(const ControlProblem& p, double t, ConstVec x, ConstVec y,
                                    ConstVec z, ConstVec a_prev, ConstVec a, double rho) {
    if (rho < 0.0) throw InvalidArgument("augmented_hamiltonian: rho must be nonnegative");
    HamiltonianTerms cand(p), prev(p);
    cand.evaluate(p, t, x, y, z, a, true);
    prev.evaluate(p, t, x, y, z, a_prev, true);
    return augmented_from_terms(cand, prev, rho);
}

/// Maximum relative error of each supplied derivative against central
/// finite differences of its base function.
struct DerivativeReport {
    double drift_jac_x = 0.0;
    double diffusion_jac_x = 0.0;
    double running_cost_grad_x = 0.0;
    double terminal_cost_grad_x = 0.0;
    std::size_t samples = 0;

    std::vector<std::pair<std::string, double>> entries() const {
        return {{"drift_jac_x", drift_jac_x},
                {"diffusion_jac_x", diffusion_jac_x},
                {"running_cost_grad_x", running_cost_grad_x},
                {"terminal_cost_grad_x", terminal_cost_grad_x}};
    }

    double worst() const {
        double w = 0.0;
        for (const auto& [_, e] : entries()) w = std::max(w, e);
        return w;
    }

    /// Names of derivatives whose error exceeds `tol`.
    std::vector<std::string> failures(double tol) const {
        std::vector<std::string> out;
        for (const auto& [name, e] : entries())
            if (!(e <= tol)) out.push_back(name);
        return out;
    }
};

struct DerivativeCheckOptions {
    std::size_t n_samples = 100;
    double step = 1e-5;
    std::uint64_t seed = 20240607;
    /// Half-width of the sampling box around the initial state.
    double box_half_width = 5.0;
};

namespace detail {

/// |fd - analytic| / max(|fd|, |analytic|, 1e-3). The floor keeps derivatives
/// that vanish from turning rounding noise into large ratios.
inline double relative_error(double fd, double analytic) {
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-3});
    return std::abs(fd - analytic) / denom;
}

/// Running maximum in which NaN counts as an infinite error.
inline void raise_to(double& acc, double v) {
    acc = std::isnan(v) ? std::numeric_limits<double>::infinity() : std::max(acc, v);
}

}  // namespace detail

inline DerivativeReport check_derivatives(const ControlProblem& p,
                                          const DerivativeCheckOptions& opt = {}) {
    if (opt.n_samples == 0) throw InvalidArgument("check_derivatives: n_samples must be >= 1");
    if (!(opt.step > 0.0)) throw InvalidArgument("check_derivatives: step must be positive");
    p.validate();
    const std::size_t d = p.state_dim, dp = p.noise_dim, ds = d * dp;
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, p.action_space.size() - 1);

    std::vector<double> x(d), xp(d), xm(d);
    std::vector<double> bp(d), bm(d), sp(ds), sm(ds), gp(d), gm(d);
    std::vector<double> jb(d * d), js(ds * d), gf(d), gg(d);
    DerivativeReport rep;
    rep.samples = opt.n_samples;
    const double h = opt.step;

    for (std::size_t s = 0; s < opt.n_samples; ++s) {
        const double t = p.horizon * unit(rng);
        for (std::size_t i = 0; i < d; ++i)
            x[i] = p.initial_state[i] - opt.box_half_width + 2.0 * opt.box_half_width * unit(rng);
        const ConstVec a = p.action_space.point(pick(rng));

        p.drift_jac_x(t, x, a, jb);
        p.diffusion_jac_x(t, x, a, js);
        p.running_cost_grad_x(t, x, a, gf);
        p.terminal_cost_grad_x(x, gg);

        for (std::size_t i = 0; i < d; ++i) {
            xp = x;
            xm = x;
            xp[i] += h;
            xm[i] -= h;
            const double width = xp[i] - xm[i];

            p.drift(t, xp, a, bp);
            p.drift(t, xm, a, bm);
            for (std::size_t j = 0; j < d; ++j)
                detail::raise_to(rep.drift_jac_x,
                                 detail::relative_error((bp[j] - bm[j]) / width, jb[j * d + i]));

            p.diffusion(t, xp, a, sp);
            p.diffusion(t, xm, a, sm);
            for (std::size_t q = 0; q < ds; ++q)
                detail::raise_to(rep.diffusion_jac_x,
                                 detail::relative_error((sp[q] - sm[q]) / width, js[q * d + i]));

            const double fd_f = (p.running_cost(t, xp, a) - p.running_cost(t, xm, a)) / width;
            detail::raise_to(rep.running_cost_grad_x, detail::relative_error(fd_f, gf[i]));

            const double fd_g = (p.terminal_cost(xp) - p.terminal_cost(xm)) / width;
            detail::raise_to(rep.terminal_cost_grad_x, detail::relative_error(fd_g, gg[i]));
        }
    }
    return rep;
}

}  // namespace mmsa
