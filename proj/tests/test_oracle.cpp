#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mmsa/criteria.hpp"
#include "mmsa/msa.hpp"
#include "mmsa/oracle.hpp"
#include "support.hpp"

using namespace mmsa;
using testing_support::constant;
using testing_support::Scalar;

namespace {

LqSpec tanh_spec() {
    LqSpec s;
    s.nu = 0.0;
    s.q_terminal = 0.0;
    return s;
}

}  // namespace

TEST(Riccati, NoStateCostGivesZero) {
    LqSpec s;
    s.q = [](double) { return 0.0; };
    s.q_terminal = 0.0;
    s.nu = 0.4;
    const auto r = riccati_lq(s, TimeGrid(50, 1.0));
    EXPECT_EQ(r.optimal_value, 0.0);
    EXPECT_EQ(r.feedback_gain(0.3), 0.0);
}

TEST(Riccati, TanhClosedForm) {
    const auto r = riccati_lq(tanh_spec(), TimeGrid(50, 1.0));
    EXPECT_NEAR(r.p[0], std::tanh(1.0), 1e-10);
    EXPECT_NEAR(r.optimal_value, std::tanh(1.0), 1e-10);
    EXPECT_NEAR(r.p_at(0.5), std::tanh(0.5), 1e-10);
    EXPECT_EQ(r.p.back(), 0.0);
}

TEST(Riccati, BernoulliClosedForm) {
    // q = 0: 1/P solves a linear ODE, u' = 2 beta u - gain^2 / r.
    LqSpec s;
    s.beta = [](double) { return 0.4; };
    s.gain = 1.3;
    s.q = [](double) { return 0.0; };
    s.r = [](double) { return 0.7; };
    s.q_terminal = 1.5;
    s.nu = 0.25;
    s.x0 = 0.8;
    const double k = s.gain * s.gain / (2.0 * 0.4 * 0.7);
    auto p_exact = [&](double t) { return 1.0 / (k + (1.0 / 1.5 - k) * std::exp(2.0 * 0.4 * (t - 1.0))); };
    const auto r = riccati_lq(s, TimeGrid(40, 1.0));
    for (std::size_t i = 0; i <= 40; ++i) EXPECT_NEAR(r.p[i], p_exact(i / 40.0), 1e-10);
    EXPECT_NEAR(r.feedback_gain(0.0), -1.3 * p_exact(0.0) / 0.7, 1e-9);
}

TEST(Riccati, RefinementIsConverged) {
    std::vector<LqSpec> specs = {make_benchmark("lq_drift").lq.value(), tanh_spec()};
    for (const auto& s : specs) {
        const TimeGrid g(50, s.horizon);
        EXPECT_LE(std::abs(riccati_lq(s, g, 10).optimal_value - riccati_lq(s, g, 20).optimal_value), 1e-8);
    }
    EXPECT_THROW(riccati_lq(tanh_spec(), TimeGrid(5, 1.0), 0), InvalidArgument);
}

TEST(Riccati, LqDriftValue) {
    // beta = 0, gain = r = q = 1: P(t) = tanh(T - t + artanh q_T) and
    // c(0) = nu^2 log(cosh(T + artanh q_T) / cosh(artanh q_T)).
    const double a = std::atanh(0.5);
    const double exact = std::tanh(1.0 + a) + 0.09 * std::log(std::cosh(1.0 + a) / std::cosh(a));
    const auto r = riccati_lq(make_benchmark("lq_drift").lq.value(), TimeGrid(50, 1.0));
    EXPECT_NEAR(r.optimal_value, exact, 1e-10);
    EXPECT_NEAR(exact, 0.9817506920482603, 1e-15);
}

TEST(DiscreteRiccati, OneStepClosedForm) {
    LqSpec s = make_benchmark("lq_drift").lq.value();
    s.beta = [](double) { return 0.3; };
    s.x0 = 1.2;
    const double dt = 1.0, a = 1.0 + 0.3 * dt, b = s.gain * dt, qT = s.q_terminal;
    auto cost = [&](double u) {
        const double m = a * s.x0 + b * u;
        return s.x0 * s.x0 * dt + u * u * dt + qT * (m * m + s.nu * s.nu * dt);
    };
    const double u_star = -qT * a * b * s.x0 / (dt + qT * b * b);
    const double j = discrete_riccati_lq(s, TimeGrid(1, 1.0));
    EXPECT_NEAR(j, cost(u_star), 1e-14);
    EXPECT_LT(j, cost(u_star + 1e-3));
    EXPECT_LT(j, cost(u_star - 1e-3));
}

TEST(DiscreteRiccati, ConvergesToContinuous) {
    const LqSpec s = make_benchmark("lq_drift").lq.value();
    const double cont = riccati_lq(s, TimeGrid(50, 1.0)).optimal_value;
    double prev = std::abs(discrete_riccati_lq(s, TimeGrid(25, 1.0)) - cont);
    for (std::size_t N : {50, 100, 200, 400}) {
        const double e = std::abs(discrete_riccati_lq(s, TimeGrid(N, 1.0)) - cont);
        EXPECT_LT(e, prev) << N;
        prev = e;
    }
    EXPECT_LT(prev, 1e-3);
}

TEST(FeedbackAdjoint, OptimalFeedbackGivesTwiceP) {
    const LqSpec s = make_benchmark("lq_drift").lq.value();
    const auto r = riccati_lq(s, TimeGrid(2000, 1.0));
    const double y0 = lq_feedback_adjoint_y0(s, [&](double t) { return r.feedback_gain(t); });
    EXPECT_NEAR(y0, 2.0 * r.p[0] * s.x0, 1e-6);
}

TEST(BruteForce, ActionFreeSequencesTie) {
    Scalar s;
    s.x0 = 1.0;
    s.actions = {-1.0, 0.0, 1.0};
    s.b = [](double, double x, double) { return -0.5 * x; };
    s.b_x = constant(-0.5);
    s.sigma = constant(0.3);
    s.f = [](double, double x, double) { return x * x; };
    s.f_x = [](double, double x, double) { return 2.0 * x; };
    const auto p = s.build();
    const TimeGrid g(4, 1.0);
    const auto noise = make_noise(g, 300, 1, 2);
    const auto bf = brute_force_optimal(p, g, noise);
    const ControlEnsemble c(300, 4, ControlMode::deterministic, 2);
    const Estimate e = estimate_cost(p, g, simulate_forward(p, g, noise, c), c);
    EXPECT_EQ(bf.j_star, e.value);
    EXPECT_EQ(bf.n_sequences, 81u);
    EXPECT_EQ(bf.best_sequence, std::vector<ControlEnsemble::Index>(4, 0));
}

TEST(BruteForce, OneStepPicksZeroAction) {
    Scalar s;
    s.actions = {0.5, 0.0, -1.0};
    s.sigma = constant(1.0);
    s.f = [](double, double, double a) { return a * a; };
    const auto p = s.build();
    const TimeGrid g(1, 1.0);
    const auto bf = brute_force_optimal(p, g, make_noise(g, 50, 1, 2));
    EXPECT_EQ(bf.best_sequence, std::vector<ControlEnsemble::Index>{1});
    EXPECT_EQ(bf.j_star, 0.0);
}

TEST(BruteForce, SmallLqOrdering) {
    const auto b = make_benchmark("lq_drift_small");
    const TimeGrid g(b.n_steps, 1.0);
    const auto noise = make_noise(g, b.n_paths, 1, kDefaultSeed);
    const auto bf = brute_force_optimal(b.problem, g, noise);
    // No open-loop sequence on a coarse grid beats the unconstrained feedback
    // optimum of the same discrete problem.
    EXPECT_GE(bf.j_star, discrete_riccati_lq(*b.lq, g) - 3.0 * bf.standard_error);
    const double cont = riccati_lq(*b.lq, g).optimal_value;
    EXPECT_GE(bf.j_star, cont - criteria::lq_tolerance(cont, bf.standard_error, b.n_steps));
    EXPECT_EQ(bf.n_sequences, 243u);
}

TEST(BruteForce, InvariantUnderActionReordering) {
    const auto b = make_benchmark("ctrl_diffusion_small");
    const TimeGrid g(b.n_steps, 1.0);
    const auto noise = make_noise(g, 500, 1, 3);
    const auto bf = brute_force_optimal(b.problem, g, noise);
    ControlProblem shuffled = b.problem;
    shuffled.action_space = ActionSpace({{1.0}, {-1.0}, {0.0}});
    const auto bs = brute_force_optimal(shuffled, g, noise);
    EXPECT_EQ(bf.j_star, bs.j_star);
    for (std::size_t k = 0; k < b.n_steps; ++k)
        EXPECT_EQ(b.problem.action_space.point(bf.best_sequence[k])[0],
                  shuffled.action_space.point(bs.best_sequence[k])[0]);
}

TEST(BruteForce, IndependentOfWorkerCount) {
    const auto b = make_benchmark("ctrl_diffusion_small");
    const TimeGrid g(b.n_steps, 1.0);
    const auto noise = make_noise(g, 500, 1, 3);
    const auto a1 = brute_force_optimal(b.problem, g, noise, Execution{1});
    const auto a3 = brute_force_optimal(b.problem, g, noise, Execution{3});
    EXPECT_EQ(a1.j_star, a3.j_star);
    EXPECT_EQ(a1.best_sequence, a3.best_sequence);
}

TEST(BruteForce, BudgetExceeded) {
    const auto b = make_benchmark("lq_drift_small");
    const TimeGrid g(13, 1.0);
    EXPECT_THROW(brute_force_optimal(b.problem, g, make_noise(g, 10, 1, 1)), ResourceError);
    const TimeGrid g5(5, 1.0);
    EXPECT_THROW(brute_force_optimal(b.problem, g5, make_noise(g5, 10, 1, 1), {}, 200), ResourceError);
}

TEST(Benchmarks, RegistryAndStructure) {
    for (const auto& name : registered_problems()) EXPECT_NO_THROW(make_benchmark(name)) << name;
    EXPECT_THROW(make_benchmark("nope"), InvalidArgument);
    const auto suite = benchmark_suite();
    ASSERT_EQ(suite.size(), 3u);
    EXPECT_EQ(suite[0].problem.name, "lq_drift");
    EXPECT_TRUE(suite[0].lq.has_value());
}

TEST(Benchmarks, DiffusionJacobianIsStateFree) {
    // sigma affine in x for every suite problem.
    for (const auto& b : benchmark_suite()) {
        const auto& p = b.problem;
        std::vector<double> j1(p.state_dim * p.noise_dim * p.state_dim), j2(j1.size());
        for (std::size_t a = 0; a < p.action_space.size(); ++a)
            for (double t : {0.0, 0.4}) {
                const std::vector<double> x1 = {-2.0}, x2 = {3.5};
                p.diffusion_jac_x(t, x1, p.action_space.point(a), j1);
                p.diffusion_jac_x(t, x2, p.action_space.point(a), j2);
                EXPECT_EQ(j1, j2) << p.name;
            }
    }
}

TEST(Benchmarks, PassDerivativeCheck) {
    for (const auto& b : benchmark_suite()) {
        const auto rep = check_derivatives(b.problem);
        EXPECT_LE(rep.worst(), 1e-6) << b.problem.name;
    }
}

TEST(Benchmarks, ClassicalMethodAscendsOnStressProblem) {
    const auto b = make_benchmark("msa_stress");
    MsaConfig cfg;
    cfg.n_paths = 10000;
    cfg.n_steps = b.n_steps;
    cfg.rho_initial = 0.0;
    cfg.rho_max = 0.0;
    cfg.backtracking = false;
    cfg.max_iterations = 20;
    const auto r = run_msa(b.problem, cfg);
    EXPECT_GE(criteria::ascent_events(r.trace, 20), 1u);
}
