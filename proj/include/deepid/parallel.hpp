#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace deepid {

namespace detail {

inline std::atomic<int>& thread_cap() {
    static std::atomic<int> cap{1};
    return cap;
}

} // namespace detail

inline void set_max_threads(int n) { detail::thread_cap().store(n < 1 ? 1 : n); }
inline int max_threads() { return detail::thread_cap().load(); }

// Runs f(i) for i in [0, n), split into contiguous chunks over at most
// max_threads() workers. Callers must write to disjoint locations per i so
// the result is identical for every thread count.
template <class F>
void parallel_for(std::size_t n, F&& f) {
    const int cap = max_threads();
    if (cap <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cap), n);
    const std::size_t chunk = (n + workers - 1) / workers;
    auto run = [&](std::size_t w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) f(i);
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
    run(0);
    for (auto& t : pool) t.join();
}

} // namespace deepid
