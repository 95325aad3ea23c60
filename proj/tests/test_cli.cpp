#include <chrono>
#include <cmath>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "mmsa/diagnostics.hpp"
#include "mmsa/oracle.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using testing_support::CommandResult;
using testing_support::read_file;
using testing_support::status_lines;

namespace {

const std::string kCli = MMSA_CLI_PATH;
const fs::path kConfigs = fs::path(MMSA_SOURCE_DIR) / "configs";

fs::path scratch(const std::string& leaf) {
    const fs::path dir = fs::temp_directory_path() / "mmsa_test_cli" / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

CommandResult mmsa_cmd(const std::string& args) { return testing_support::run_command(kCli + " " + args); }

CommandResult with_config(const std::string& sub, const std::string& config, const fs::path& out,
                          const std::string& extra = "") {
    return mmsa_cmd(sub + " --config " + (kConfigs / config).string() + " --out " + out.string() + " " + extra);
}

fs::path write_ini(const fs::path& dir, const std::string& body) {
    const fs::path p = dir / "custom.ini";
    mmsa::csv::write_file(p.string(), body);
    return p;
}

/// Value of `key=` in a status line.
std::string field(const std::string& line, const std::string& key) {
    const std::string tag = " " + key + "=";
    const auto at = line.find(tag);
    if (at == std::string::npos) return "";
    const auto start = at + tag.size();
    return line.substr(start, line.find(' ', start) - start);
}

/// Exactly one status line, which is returned.
std::string single_status(const CommandResult& r) {
    const auto lines = status_lines(r.output);
    EXPECT_EQ(lines.size(), 1u) << r.output;
    return lines.empty() ? "" : lines.front();
}

}  // namespace

TEST(Cli, RunLqWithinTolerance) {
    const auto out = scratch("run_lq");
    const auto r = with_config("run", "lq_drift.ini", out);
    EXPECT_EQ(r.exit_code, 0) << r.output;
    const std::string s = single_status(r);
    EXPECT_EQ(s.rfind("mmsa: status=ok command=run", 0), 0u) << s;
    const double j = std::stod(field(s, "J"));
    const double j_star = std::stod(field(s, "riccati_J"));
    EXPECT_LE(std::abs(j - j_star), 0.02 * j_star);
    const auto trace = mmsa::read_trace_csv((out / "trace.csv").string());
    EXPECT_GE(trace.rows.size(), 2u);
    EXPECT_TRUE(fs::exists(out / "summary.txt"));
}

TEST(Cli, DescentFailureExitsTwoAndKeepsTrace) {
    const auto out = scratch("no_rho");
    const auto r = with_config("run", "msa_stress_no_rho.ini", out);
    EXPECT_EQ(r.exit_code, 2) << r.output;
    EXPECT_EQ(single_status(r).rfind("mmsa: status=descent_failure", 0), 0u);
    const auto trace = mmsa::read_trace_csv((out / "trace.csv").string());
    ASSERT_GE(trace.rows.size(), 2u);
    EXPECT_FALSE(trace.rows.back().accepted);
}

TEST(Cli, UnknownConfigKeyExitsOne) {
    const auto out = scratch("bad_key");
    const auto ini = write_ini(out, "[problem]\nname = lq_drift\n[msa]\nrho_inital = 1\n");
    const auto r = mmsa_cmd("run --config " + ini.string() + " --out " + out.string());
    EXPECT_EQ(r.exit_code, 1);
    const std::string s = single_status(r);
    EXPECT_EQ(s.rfind("mmsa: status=config_error", 0), 0u) << s;
    EXPECT_NE(s.find("msa.rho_inital"), std::string::npos);
}

TEST(Cli, UnknownProblemExitsOne) {
    const auto out = scratch("bad_problem");
    const auto ini = write_ini(out, "[problem]\nname = nonsense\n");
    const auto r = mmsa_cmd("run --config " + ini.string() + " --out " + out.string());
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(single_status(r).find("nonsense"), std::string::npos);
}

TEST(Cli, UsageErrors) {
    auto r = mmsa_cmd("run");
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_EQ(single_status(r).rfind("mmsa: status=usage_error", 0), 0u);
    r = mmsa_cmd("fly --config x.ini");
    EXPECT_EQ(r.exit_code, 1);
    r = mmsa_cmd("run --config " + (kConfigs / "lq_drift.ini").string() + " --workers 0");
    EXPECT_EQ(r.exit_code, 1);
    r = mmsa_cmd("run --config /nonexistent.ini");
    EXPECT_EQ(r.exit_code, 1);
    single_status(r);
}

TEST(Cli, ValidatePasses) {
    const auto out = scratch("validate");
    const auto r = with_config("validate", "validate.ini", out);
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_EQ(single_status(r).rfind("mmsa: status=ok command=validate", 0), 0u);
    EXPECT_EQ(r.output.find("FAIL"), std::string::npos) << r.output;
}

TEST(Cli, ValidateNamesCorruptedDerivative) {
    const auto out = scratch("validate_bad");
    const auto r = with_config("validate", "validate_bad_gradient.ini", out);
    EXPECT_EQ(r.exit_code, 3) << r.output;
    const std::string s = single_status(r);
    EXPECT_NE(s.find("lq_drift_bad_gradient:running_cost_grad_x"), std::string::npos) << s;
}

TEST(Cli, ValidateEmptySelectionExitsOne) {
    const auto out = scratch("validate_empty");
    const auto ini = write_ini(out, "[validate]\nproblems =\n");
    const auto r = mmsa_cmd("validate --config " + ini.string() + " --out " + out.string());
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(single_status(r).find("empty problem selection"), std::string::npos);
}

TEST(Cli, RateSyntheticReplay) {
    auto out = scratch("rate_inverse_n");
    auto r = with_config("rate", "rate_synthetic_inverse_n.ini", out);
    EXPECT_EQ(r.exit_code, 0) << r.output;
    const auto rows = mmsa::read_rate_csv((out / "rate_synthetic_inverse_n.csv").string());
    ASSERT_EQ(rows.size(), 91u);
    for (const auto& row : rows) EXPECT_NEAR(row.n_times_gap, 1.0, 1e-12);

    out = scratch("rate_inverse_log");
    r = with_config("rate", "rate_synthetic_inverse_log.ini", out);
    EXPECT_EQ(r.exit_code, 3) << r.output;
    EXPECT_NE(read_file((out / "rate_summary.txt").string()).find("status=fail"), std::string::npos);
}

TEST(Cli, RateOnLq) {
    const auto out = scratch("rate_lq");
    const auto r = with_config("rate", "rate.ini", out);
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_TRUE(fs::exists(out / "rate_lq_drift.csv"));
}

TEST(Cli, RateWithoutOracleExitsOne) {
    // ctrl_diffusion has no Riccati oracle and per-path mode rules out brute force.
    const auto out = scratch("rate_no_oracle");
    const auto ini = write_ini(out, "[rate]\nproblems = ctrl_diffusion\noracle = riccati\n");
    auto r = mmsa_cmd("rate --config " + ini.string() + " --out " + out.string());
    EXPECT_EQ(r.exit_code, 1) << r.output;
    const auto ini2 = write_ini(out, "[rate]\nproblems = ctrl_diffusion\n");
    r = mmsa_cmd("rate --config " + ini2.string() + " --out " + out.string());
    EXPECT_EQ(r.exit_code, 1) << r.output;
    single_status(r);
}

TEST(Cli, SeedAndWorkersFlags) {
    const auto a = scratch("flags_a"), b = scratch("flags_b"), c = scratch("flags_c");
    const auto ini = write_ini(a, "[problem]\nname = ctrl_diffusion\n[sde]\nn_paths = 2000\n[msa]\nmax_iterations = 4\n");
    const std::string base = "run --config " + ini.string();
    EXPECT_NE(mmsa_cmd(base + " --out " + a.string()).exit_code, 1);
    mmsa_cmd(base + " --out " + b.string() + " --workers 3");
    mmsa_cmd(base + " --out " + c.string() + " --seed 7");
    const auto ta = read_file((a / "trace.csv").string());
    EXPECT_FALSE(ta.empty());
    EXPECT_EQ(ta, read_file((b / "trace.csv").string()));
    EXPECT_NE(ta, read_file((c / "trace.csv").string()));
}

TEST(Cli, FullBenchWithinBudget) {
    const auto out = scratch("bench");
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = with_config("bench", "bench.ini", out);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_EQ(single_status(r).rfind("mmsa: status=ok command=bench", 0), 0u);
    EXPECT_LE(secs, 180.0);
    const std::string summary = read_file((out / "bench_summary.txt").string());
    EXPECT_NE(summary.find("PASS msa_stress:classical_ascent"), std::string::npos);
    for (const char* f : {"lq_drift_trace.csv", "lq_drift_N200_trace.csv", "msa_stress_classical_trace.csv",
                          "ctrl_diffusion_small_trace.csv"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
}
