#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace nubd {

namespace detail {
inline std::atomic<int>& thread_limit() {
    static std::atomic<int> limit{1};
    return limit;
}
}  // namespace detail

/// Upper bound on worker threads used by parallel_for. 1 is the reference configuration.
inline void set_thread_count(int n) { detail::thread_limit() = std::max(1, n); }
inline int thread_count() { return detail::thread_limit(); }

/**
 * Calls fn(i) for i in [0, n). Each index must write only to its own output slot;
 * callers reduce afterwards in index order so results do not depend on the thread count.
 */
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace nubd
