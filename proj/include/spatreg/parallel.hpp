#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace spatreg {

namespace detail {
inline std::atomic<int>& thread_limit() {
    static std::atomic<int> limit{0}; // 0 = hardware concurrency
    return limit;
}
} // namespace detail

/// Caps the worker count used by parallel_for. 0 restores the hardware default.
inline void set_max_threads(int n) { detail::thread_limit().store(n < 0 ? 0 : n); }

inline int max_threads() {
    const int limit = detail::thread_limit().load();
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    const int base = hw > 0 ? hw : 1;
    return limit > 0 ? std::min(limit, base) : base;
}

/// Runs fn(i) for i in [0, n). Iterations must write to disjoint state; results are
/// then identical for any thread count, since the work split carries no reductions.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(std::max(max_threads(), 1), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&]() {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace spatreg
