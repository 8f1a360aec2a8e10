#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mm {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Callers keep
// determinism by writing results into index-addressed slots. The first
// exception that escapes fn is rethrown after all workers join.
template <typename Fn>
void parallel_for(int64_t n, int workers, Fn&& fn) {
    if (n <= 0) return;
    const int w = static_cast<int>(std::min<int64_t>(std::max(1, workers), n));
    if (w == 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (int t = 0; t < w; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const int64_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (std::thread& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace mm
