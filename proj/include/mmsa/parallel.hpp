#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mmsa {

/// Caps the number of worker threads used inside a call. Results never
/// depend on this value: work is split into disjoint index ranges and every
/// reduction runs afterwards in index order.
struct Execution {
    unsigned workers = 1;
};

/// Calls `body(begin, end)` on contiguous sub-ranges of [0, n). If any chunk
/// throws, the exception of the lowest chunk is rethrown.
template <class Body>
void parallel_for(std::size_t n, const Execution& exec, Body&& body) {
    if (n == 0) return;
    const std::size_t workers =
        std::clamp<std::size_t>(exec.workers, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
        body(std::size_t{0}, n);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    threads.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back([&, w, begin, end] {
            try {
                body(begin, end);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace mmsa
