#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <system_error>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mmsa/error.hpp"
#include "mmsa/msa.hpp"

namespace mmsa {

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Everything a CLI invocation needs. Fields left unset fall back to the
/// scale registered with the benchmark.
struct RunConfig {
    std::string problem;
    MsaConfig msa;
    std::optional<std::size_t> n_paths;
    std::optional<std::size_t> n_steps;
    std::optional<ControlMode> control_mode;

    std::string output_dir = "out";
    bool timing = false;

    std::vector<std::string> validate_problems;
    std::size_t validate_samples = 100;
    double validate_step = 1e-5;
    double validate_box = 5.0;
    double validate_tol = 1e-6;

    std::vector<std::string> bench_problems;

    std::vector<std::string> rate_problems;
    std::size_t rate_n_min = 1;
    std::size_t rate_n_max = 100;
    std::string rate_oracle = "auto";
    std::string rate_synthetic = "none";
};

namespace config_detail {

using boost::property_tree::ptree;

inline const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s = {
        {"problem", {"name"}},
        {"msa",
         {"rho_initial", "rho_growth", "rho_max", "tol_mu", "tol_dj", "max_iterations",
          "control_mode", "backtracking", "descent_slack", "stall_probe", "rho_probe_floor"}},
        {"sde", {"n_paths", "n_steps", "seed"}},
        {"bsde", {"degree", "ridge"}},
        {"output", {"dir", "timing"}},
        {"validate", {"problems", "n_samples", "step", "box_half_width", "tolerance"}},
        {"bench", {"problems"}},
        {"rate", {"problems", "n_min", "n_max", "oracle", "synthetic"}},
    };
    return s;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    T out{};
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::vector<std::string> parse_list(const std::string& raw) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= raw.size()) {
        const auto comma = raw.find(',', start);
        const std::string item = trim(raw.substr(start, comma - start));
        if (!item.empty()) out.push_back(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::size_t positive_count(const std::string& key, const std::string& raw) {
    const auto v = parse_number<std::size_t>(key, raw);
    if (v == 0) throw ConfigError("config key '" + key + "' must be >= 1");
    return v;
}

}  // namespace config_detail

/// Parses an INI-style config. Unknown sections or keys are errors.
inline RunConfig load_config(std::istream& in, const std::string& origin = "config") {
    using namespace config_detail;
    ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }

    RunConfig c;
    for (const auto& [section, body] : tree) {
        const auto& allowed = schema();
        const auto it = allowed.find(section);
        if (it == allowed.end()) {
            if (!body.data().empty()) throw ConfigError("unknown config key '" + section + "' outside a section");
            throw ConfigError("unknown config section [" + section + "]");
        }
        for (const auto& [key, leaf] : body) {
            const std::string full = section + "." + key;
            if (!it->second.count(key)) throw ConfigError("unknown config key '" + full + "'");
            const std::string v = trim(leaf.data());
            if (full == "problem.name") c.problem = v;
            else if (full == "msa.rho_initial") c.msa.rho_initial = parse_number<double>(full, v);
            else if (full == "msa.rho_growth") c.msa.rho_growth = parse_number<double>(full, v);
            else if (full == "msa.rho_max") c.msa.rho_max = parse_number<double>(full, v);
            else if (full == "msa.tol_mu") c.msa.tol_mu = parse_number<double>(full, v);
            else if (full == "msa.tol_dj") c.msa.tol_dj = parse_number<double>(full, v);
            else if (full == "msa.max_iterations") c.msa.max_iterations = positive_count(full, v);
            else if (full == "msa.backtracking") c.msa.backtracking = parse_bool(full, v);
            else if (full == "msa.descent_slack") c.msa.descent_slack = parse_number<double>(full, v);
            else if (full == "msa.stall_probe") c.msa.stall_probe = parse_bool(full, v);
            else if (full == "msa.rho_probe_floor") c.msa.rho_probe_floor = parse_number<double>(full, v);
            else if (full == "msa.control_mode") {
                if (v == "per_path") c.control_mode = ControlMode::per_path;
                else if (v == "deterministic") c.control_mode = ControlMode::deterministic;
                else throw ConfigError("config key '" + full + "': expected per_path or deterministic");
            }
            else if (full == "sde.n_paths") c.n_paths = positive_count(full, v);
            else if (full == "sde.n_steps") c.n_steps = positive_count(full, v);
            else if (full == "sde.seed") c.msa.seed = parse_number<std::uint64_t>(full, v);
            else if (full == "bsde.degree") c.msa.basis.degree = parse_number<std::size_t>(full, v);
            else if (full == "bsde.ridge") c.msa.basis.ridge = parse_number<double>(full, v);
            else if (full == "output.dir") c.output_dir = v;
            else if (full == "output.timing") c.timing = parse_bool(full, v);
            else if (full == "validate.problems") c.validate_problems = parse_list(v);
            else if (full == "validate.n_samples") c.validate_samples = positive_count(full, v);
            else if (full == "validate.step") c.validate_step = parse_number<double>(full, v);
            else if (full == "validate.box_half_width") c.validate_box = parse_number<double>(full, v);
            else if (full == "validate.tolerance") c.validate_tol = parse_number<double>(full, v);
            else if (full == "bench.problems") c.bench_problems = parse_list(v);
            else if (full == "rate.problems") c.rate_problems = parse_list(v);
            else if (full == "rate.n_min") c.rate_n_min = positive_count(full, v);
            else if (full == "rate.n_max") c.rate_n_max = positive_count(full, v);
            else if (full == "rate.oracle") c.rate_oracle = v;
            else if (full == "rate.synthetic") c.rate_synthetic = v;
        }
    }

    try {
        c.msa.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    if (!(c.validate_step > 0.0)) throw ConfigError("config key 'validate.step' must be > 0");
    if (!(c.validate_box > 0.0)) throw ConfigError("config key 'validate.box_half_width' must be > 0");
    if (!(c.validate_tol > 0.0)) throw ConfigError("config key 'validate.tolerance' must be > 0");
    if (c.rate_n_max < c.rate_n_min) throw ConfigError("config: rate.n_max must be >= rate.n_min");
    static const std::set<std::string> oracles = {"auto", "riccati", "discrete_riccati", "brute_force"};
    if (!oracles.count(c.rate_oracle))
        throw ConfigError("config key 'rate.oracle': expected auto, riccati, discrete_riccati or brute_force");
    static const std::set<std::string> synth = {"none", "inverse_n", "inverse_log"};
    if (!synth.count(c.rate_synthetic))
        throw ConfigError("config key 'rate.synthetic': expected none, inverse_n or inverse_log");
    return c;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return load_config(in, path);
}

}  // namespace mmsa
