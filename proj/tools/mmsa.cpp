#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mmsa/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Modified method of successive approximations for stochastic control"};
    app.require_subcommand(1);

    mmsa::cli::Options opt;
    std::uint64_t seed = 0;
    std::string out_dir;
    const struct {
        const char* name;
        const char* help;
        int (*fn)(const mmsa::cli::Options&, std::ostream&);
    } commands[] = {
        {"run", "solve one problem and write its trace", mmsa::cli::cmd_run},
        {"validate", "derivative and adjoint checks", mmsa::cli::cmd_validate},
        {"bench", "benchmark suite with acceptance thresholds", mmsa::cli::cmd_bench},
        {"rate", "convergence-rate study", mmsa::cli::cmd_rate},
    };
    for (const auto& c : commands) {
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", opt.config_path, "INI config file")->required();
        sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
        sub->add_option("--workers", opt.workers, "worker threads; results do not depend on it")
            ->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed, "noise seed (overrides sde.seed)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << '\n';
        std::cout << mmsa::cli::Status("none", "usage_error").add("message", e.what()).line() << '\n';
        return mmsa::cli::usage_error;
    }

    for (const auto& c : commands) {
        CLI::App* sub = app.get_subcommand(c.name);
        if (!sub->parsed()) continue;
        if (sub->count("--out")) opt.out_dir = out_dir;
        if (sub->count("--seed")) opt.seed = seed;
        return c.fn(opt, std::cout);
    }
    return mmsa::cli::usage_error;
}
