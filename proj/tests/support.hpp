#pragma once

#include <cstdio>
#include <cstdlib>
#include <sys/wait.h>
#include <vector>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>

#include "mmsa/problem.hpp"

namespace testing_support {

using Scalar3 = std::function<double(double t, double x, double a)>;

/// Scalar problem from plain (t, x, a) formulas.
struct Scalar {
    Scalar3 b = [](double, double, double) { return 0.0; };
    Scalar3 b_x = [](double, double, double) { return 0.0; };
    Scalar3 sigma = [](double, double, double) { return 0.0; };
    Scalar3 sigma_x = [](double, double, double) { return 0.0; };
    Scalar3 f = [](double, double, double) { return 0.0; };
    Scalar3 f_x = [](double, double, double) { return 0.0; };
    std::function<double(double)> g = [](double) { return 0.0; };
    std::function<double(double)> g_x = [](double) { return 0.0; };
    std::vector<double> actions = {0.0};
    double x0 = 0.0;
    double horizon = 1.0;

    mmsa::ControlProblem build(const std::string& name = "scalar") const {
        using mmsa::ConstVec;
        using mmsa::MutVec;
        mmsa::ControlProblem p;
        p.name = name;
        p.horizon = horizon;
        p.initial_state = {x0};
        std::vector<std::vector<double>> pts;
        for (double a : actions) pts.push_back({a});
        p.action_space = mmsa::ActionSpace(pts);
        auto wrap = [](Scalar3 fn) {
            return [fn](double t, ConstVec x, ConstVec a, MutVec o) { o[0] = fn(t, x[0], a[0]); };
        };
        p.drift = wrap(b);
        p.drift_jac_x = wrap(b_x);
        p.diffusion = wrap(sigma);
        p.diffusion_jac_x = wrap(sigma_x);
        p.running_cost = [fn = f](double t, ConstVec x, ConstVec a) { return fn(t, x[0], a[0]); };
        p.running_cost_grad_x = wrap(f_x);
        p.terminal_cost = [fn = g](ConstVec x) { return fn(x[0]); };
        p.terminal_cost_grad_x = [fn = g_x](ConstVec x, MutVec o) { o[0] = fn(x[0]); };
        return p;
    }
};

inline Scalar3 constant(double c) {
    return [c](double, double, double) { return c; };
}

struct CommandResult {
    int exit_code = -1;
    std::string output;
};

/// Runs a shell command, capturing stdout.
inline CommandResult run_command(const std::string& cmd) {
    CommandResult r;
    FILE* pipe = popen((cmd + " 2>/dev/null").c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Lines of `text` that begin with the status prefix.
inline std::vector<std::string> status_lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line))
        if (line.rfind("mmsa: status=", 0) == 0) out.push_back(line);
    return out;
}

}  // namespace testing_support
