#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "mmsa/bsde.hpp"
#include "mmsa/diagnostics.hpp"
#include "mmsa/msa.hpp"
#include "mmsa/oracle.hpp"
#include "mmsa/sde.hpp"

// Pass/fail checks shared by `mmsa bench` and the acceptance binary.
namespace mmsa::criteria {

inline constexpr double kSlack = 3.0;

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Accepted rows with J_n - J_{n-1} > slack * SE of the paired difference.
inline std::size_t descent_violations(const IterationTrace& t, double slack = kSlack) {
    std::size_t v = 0;
    for (const auto& r : t.rows)
        if (r.n > 0 && r.accepted && r.delta_cost > slack * r.delta_se) ++v;
    return v;
}

/// Rows with n <= within whose cost rose by more than slack SE, accepted or not.
inline std::size_t ascent_events(const IterationTrace& t, std::size_t within, double slack = kSlack) {
    std::size_t v = 0;
    for (const auto& r : t.rows)
        if (r.n > 0 && r.n <= within && r.delta_cost > slack * r.delta_se) ++v;
    return v;
}

inline std::size_t mu_violations(const IterationTrace& t, double slack = kSlack) {
    std::size_t v = 0;
    for (const auto& r : t.rows)
        if (r.n > 0 && r.mu > slack * r.mu_se) ++v;
    return v;
}

/// First iteration n <= within with |mu_n| <= tol, or 0 if there is none.
inline std::size_t mu_converged_at(const IterationTrace& t, double tol, std::size_t within) {
    for (const auto& r : t.rows)
        if (r.n > 0 && r.n <= within && std::abs(r.mu) <= tol) return r.n;
    return 0;
}

/// Tolerance for |J - J*| on the LQ benchmark: max(2% |J*|, 3 SE + a dt
/// allowance of 5% |J*| at N = 50 that halves at N = 200).
inline double lq_tolerance(double j_star, double se, std::size_t n_steps) {
    const double dt_allowance = 0.05 * std::abs(j_star) * std::sqrt(50.0 / static_cast<double>(n_steps));
    return std::max(0.02 * std::abs(j_star), kSlack * se + dt_allowance);
}

struct AdjointAgreement {
    std::vector<double> lsmc, lsmc_se, linear, linear_se;
    bool passed = true;
};

/// Path-averaged LSMC Y_0 against the fundamental-solution estimate, per
/// component, within slack combined standard errors.
inline AdjointAgreement adjoint_agreement(const ControlProblem& p, const TimeGrid& grid,
                                          const NoiseBank& noise, const StateEnsemble& states,
                                          const ControlEnsemble& control,
                                          const RegressionBasis& basis, const Execution& exec,
                                          double slack = kSlack) {
    AdjointAgreement a;
    const AdjointEnsemble adj = solve_adjoint_lsmc(p, grid, noise, states, control, basis, exec);
    const VectorEstimate lin = solve_adjoint_linear_y0(p, grid, noise, states, control, exec);
    const std::size_t d = p.state_dim, M = states.n_paths();
    std::vector<double> col(M);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < M; ++i) col[i] = adj.y(i, 0)[j];
        const Estimate e = mean_and_se(col);
        // Y_0 is one regressed number; its spread is the regression SE.
        const double se = std::max(e.standard_error, adj.y_se(0)[j]);
        a.lsmc.push_back(e.value);
        a.lsmc_se.push_back(se);
        a.linear.push_back(lin.value[j]);
        a.linear_se.push_back(lin.standard_error[j]);
        const double combined = std::sqrt(se * se + lin.standard_error[j] * lin.standard_error[j]);
        if (!(std::abs(e.value - lin.value[j]) <= slack * combined)) a.passed = false;
    }
    return a;
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

}  // namespace mmsa::criteria
