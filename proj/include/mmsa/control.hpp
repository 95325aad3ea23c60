#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmsa/error.hpp"

namespace mmsa {

enum class ControlMode { per_path, deterministic };

inline const char* to_string(ControlMode m) {
    return m == ControlMode::per_path ? "per_path" : "deterministic";
}

/// One action index per (path, step). In deterministic mode every row holds
/// the same sequence; writes go through `set_step` so the rows stay equal.
class ControlEnsemble {
public:
    using Index = std::uint32_t;

    ControlEnsemble() = default;

    ControlEnsemble(std::size_t n_paths, std::size_t n_steps, ControlMode mode, Index fill = 0)
        : n_paths_(n_paths), n_steps_(n_steps), mode_(mode), idx_(n_paths * n_steps, fill) {
        if (n_paths == 0 || n_steps == 0)
            throw InvalidArgument("control ensemble needs positive (paths, steps)");
    }

    /// Deterministic control replicating `sequence` on every path.
    static ControlEnsemble from_sequence(std::size_t n_paths, std::span<const Index> sequence) {
        ControlEnsemble c(n_paths, sequence.size(), ControlMode::deterministic);
        for (std::size_t k = 0; k < sequence.size(); ++k) c.set_step(k, sequence[k]);
        return c;
    }

    std::size_t n_paths() const { return n_paths_; }
    std::size_t n_steps() const { return n_steps_; }
    ControlMode mode() const { return mode_; }

    Index at(std::size_t path, std::size_t step) const { return idx_[path * n_steps_ + step]; }

    /// Per-path write. Not allowed in deterministic mode.
    void set(std::size_t path, std::size_t step, Index a) {
        if (mode_ == ControlMode::deterministic)
            throw InvalidArgument("deterministic controls are written per step");
        idx_[path * n_steps_ + step] = a;
    }

    /// Sets step `step` to `a` on every path.
    void set_step(std::size_t step, Index a) {
        for (std::size_t i = 0; i < n_paths_; ++i) idx_[i * n_steps_ + step] = a;
    }

    std::span<const Index> row(std::size_t path) const {
        return {idx_.data() + path * n_steps_, n_steps_};
    }

    /// Throws unless the shape is (paths, steps) and every index < n_actions.
    void require_compatible(std::size_t paths, std::size_t steps, std::size_t n_actions) const {
        if (paths != n_paths_ || steps != n_steps_)
            throw InvalidArgument("control ensemble shape (" + std::to_string(n_paths_) + ", " +
                                  std::to_string(n_steps_) + ") does not match (" +
                                  std::to_string(paths) + ", " + std::to_string(steps) + ")");
        for (Index a : idx_)
            if (a >= n_actions)
                throw InvalidArgument("control index " + std::to_string(a) +
                                      " outside the action space");
    }

    /// Number of (path, step) entries that differ from `other`.
    std::size_t count_changes(const ControlEnsemble& other) const {
        std::size_t n = 0;
        for (std::size_t q = 0; q < idx_.size(); ++q) n += idx_[q] != other.idx_[q];
        return n;
    }

    friend bool operator==(const ControlEnsemble&, const ControlEnsemble&) = default;

private:
    std::size_t n_paths_ = 0;
    std::size_t n_steps_ = 0;
    ControlMode mode_ = ControlMode::per_path;
    std::vector<Index> idx_;
};

}  // namespace mmsa
