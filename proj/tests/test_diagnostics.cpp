#include <filesystem>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mmsa/diagnostics.hpp"
#include "mmsa/msa.hpp"
#include "mmsa/oracle.hpp"
#include "support.hpp"

using namespace mmsa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& leaf) {
    const fs::path dir = fs::temp_directory_path() / "mmsa_test_diagnostics";
    fs::create_directories(dir);
    return dir / leaf;
}

IterationRecord row(std::size_t n, double cost, double se, bool accepted = true) {
    IterationRecord r;
    r.n = n;
    r.cost = cost;
    r.cost_se = se;
    r.accepted = accepted;
    return r;
}

}  // namespace

TEST(RateFit, InverseNHasUnitSlope) {
    const auto rep = rate_fit(synthetic_trace(SyntheticGap::inverse_n, 2.0, 100), 2.0, 10, 100);
    EXPECT_NEAR(rep.slope, -1.0, 1e-9);
    EXPECT_NEAR(rep.sup_n_gap, 1.0, 1e-12);
    EXPECT_EQ(rep.points.size(), 91u);
    EXPECT_EQ(rep.resolved_count(), 91u);
    EXPECT_EQ(rep.status, RateStatus::pass);
}

TEST(RateFit, InverseLogFails) {
    const auto rep = rate_fit(synthetic_trace(SyntheticGap::inverse_log, 0.0, 100), 0.0, 10, 100);
    // Least squares of log(1 / log(n + 1)) on log n over n = 10..100, computed
    // independently in double precision.
    EXPECT_NEAR(rep.slope, -0.2707183077957036, 1e-12);
    EXPECT_NEAR(rep.first_n_gap, 10.0 / std::log(11.0), 1e-12);
    EXPECT_NEAR(rep.sup_n_gap, 100.0 / std::log(101.0), 1e-12);
    EXPECT_EQ(rep.status, RateStatus::fail);
    EXPECT_FALSE(rep.passed());
}

TEST(RateFit, ConvergedBeforeWindow) {
    IterationTrace t;
    t.rows = {row(0, 2.0, 0.01), row(1, 1.2, 0.01), row(2, 1.001, 0.01), row(3, 1.0, 0.01)};
    const auto rep = rate_fit(t, 1.0, 1, 100);
    EXPECT_EQ(rep.resolved_count(), 1u);
    EXPECT_EQ(rep.status, RateStatus::pass);

    const auto late = rate_fit(t, 1.0, 2, 100);
    EXPECT_EQ(late.resolved_count(), 0u);
    EXPECT_EQ(late.status, RateStatus::converged_before_window);
    EXPECT_TRUE(late.passed());
    EXPECT_STREQ(to_string(late.status), "converged-before-rate-window");
}

TEST(RateFit, NoiseFloorAndRejectedRows) {
    IterationTrace t;
    t.rows = {row(1, 1.5, 0.01), row(2, 1.8, 0.01, false), row(3, 1.04, 0.01), row(4, 1.06, 0.01)};
    const auto rep = rate_fit(t, 1.0, 1, 10);
    ASSERT_EQ(rep.points.size(), 3u);
    EXPECT_TRUE(rep.points[0].resolved);
    EXPECT_FALSE(rep.points[1].resolved);  // gap 0.04 < 5 SE
    EXPECT_TRUE(rep.points[2].resolved);
    EXPECT_NEAR(rep.min_gap_z, 4.0, 1e-9);
    EXPECT_THROW(rate_fit(t, 1.0, 0, 10), InvalidArgument);
    EXPECT_THROW(rate_fit(t, 1.0, 5, 4), InvalidArgument);
}

TEST(RecursiveBound, ZeroSequenceHolds) {
    EXPECT_TRUE(check_recursive_bound(std::vector<double>(10, 0.0), 0.5).ok());
}

TEST(RecursiveBound, ConstantSequenceViolatesHypothesis) {
    const auto r = check_recursive_bound(std::vector<double>(10, 0.3), 0.5);
    EXPECT_FALSE(r.hypothesis_holds);
    EXPECT_EQ(r.first_violation, 1u);
}

TEST(RecursiveBound, HarmonicSequenceViolatesHypothesisAtFirstStep) {
    // b_k = 1 / (q k): b_2 = 1 / (2q) exceeds b_1 - q b_1^2 = 0.
    const double q = 0.8;
    std::vector<double> b(20);
    for (std::size_t k = 1; k <= 20; ++k) b[k - 1] = 1.0 / (q * static_cast<double>(k));
    const auto r = check_recursive_bound(b, q);
    EXPECT_FALSE(r.hypothesis_holds);
    EXPECT_EQ(r.first_violation, 1u);
}

TEST(RecursiveBound, ExtremalRecursion) {
    const double q = 2.0;
    std::vector<double> b = {1.0 / (2.0 * q)};
    for (std::size_t k = 1; k < 1000; ++k) b.push_back(b.back() - q * b.back() * b.back());
    const auto r = check_recursive_bound(b, q);
    EXPECT_TRUE(r.ok());
    for (std::size_t k = 1; k <= b.size(); ++k) EXPECT_LE(static_cast<double>(k) * b[k - 1], 1.0 / q);
}

TEST(RecursiveBound, RandomAdmissibleSequences) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const double q = 0.1 + 5.0 * u(rng);
        std::vector<double> b = {u(rng) * 1.5 / q};
        if (b[0] > 1.0 / q) b[0] = 1.0 / q;
        const std::size_t len = 2 + static_cast<std::size_t>(u(rng) * 200);
        while (b.size() < len) b.push_back((b.back() - q * b.back() * b.back()) * u(rng));
        const auto r = check_recursive_bound(b, q);
        ASSERT_TRUE(r.ok()) << "trial " << trial << " violation at " << r.first_violation.value_or(0);
    }
}

TEST(RecursiveBound, LargeFirstTermBreaksNonnegativity) {
    const auto r = check_recursive_bound({2.0, 0.0}, 1.0);
    EXPECT_FALSE(r.hypothesis_holds);
    EXPECT_EQ(r.first_violation, 1u);
    EXPECT_THROW(check_recursive_bound({}, 1.0), InvalidArgument);
    EXPECT_THROW(check_recursive_bound({0.1}, 0.0), InvalidArgument);
}

TEST(TraceCsv, EmptyTraceIsHeaderOnly) {
    const IterationTrace t;
    EXPECT_EQ(trace_csv(t), std::string(kTraceHeader) + "\n");
    const auto path = scratch("empty.csv").string();
    export_csv(t, path);
    EXPECT_TRUE(read_trace_csv(path).rows.empty());
}

TEST(TraceCsv, RoundTripIsExact) {
    const auto b = make_benchmark("lq_drift_small");
    MsaConfig cfg;
    cfg.n_paths = b.n_paths;
    cfg.n_steps = b.n_steps;
    cfg.control_mode = b.mode;
    cfg.record_timing = true;
    const auto r = run_msa(b.problem, cfg);
    const auto path = scratch("trace.csv").string();
    export_csv(r.trace, path);
    const auto back = read_trace_csv(path);
    ASSERT_EQ(back.rows.size(), r.trace.rows.size());
    for (std::size_t i = 0; i < back.rows.size(); ++i) {
        const auto &x = r.trace.rows[i], &y = back.rows[i];
        EXPECT_EQ(x.n, y.n);
        EXPECT_EQ(x.cost, y.cost);
        EXPECT_EQ(x.cost_se, y.cost_se);
        EXPECT_EQ(x.mu, y.mu);
        EXPECT_EQ(x.mu_se, y.mu_se);
        EXPECT_EQ(x.rho, y.rho);
        EXPECT_EQ(x.backtracks, y.backtracks);
        EXPECT_EQ(x.accepted, y.accepted);
        EXPECT_EQ(x.wall_ms, y.wall_ms);
    }
    EXPECT_EQ(trace_csv(back), testing_support::read_file(path));
}

TEST(TraceCsv, MalformedInputIsReported) {
    const auto path = scratch("bad.csv").string();
    csv::write_file(path, "n,J\n1,2\n");
    EXPECT_THROW(read_trace_csv(path), Error);
    csv::write_file(path, std::string(kTraceHeader) + "\n1,2,3\n");
    try {
        read_trace_csv(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
    }
    csv::write_file(path, std::string(kTraceHeader) + "\n1,2,3,4,5,6,7,yes,0\n");
    EXPECT_THROW(read_trace_csv(path), Error);
    csv::write_file(path, std::string(kTraceHeader) + "\n1,abc,3,4,5,6,7,1,0\n");
    EXPECT_THROW(read_trace_csv(path), Error);
    EXPECT_THROW(read_trace_csv(scratch("missing.csv").string()), Error);
    EXPECT_THROW(export_csv(IterationTrace{}, (scratch("no_such_dir") / "x.csv").string()), Error);
}

TEST(RateCsv, RoundTrip) {
    const auto rep = rate_fit(synthetic_trace(SyntheticGap::inverse_n, 0.5, 30), 0.5, 1, 30);
    const auto path = scratch("rate.csv").string();
    export_csv(rep, path);
    const auto rows = read_rate_csv(path);
    ASSERT_EQ(rows.size(), 30u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i].n, rep.points[i].n);
        EXPECT_EQ(rows[i].gap, rep.points[i].gap);
        EXPECT_NEAR(rows[i].n_times_gap, 1.0, 1e-12);
    }
    const RateReport empty;
    export_csv(empty, path);
    EXPECT_EQ(testing_support::read_file(path), std::string(kRateHeader) + "\n");
}
