#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ceval {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Work items must be
// independent; callers write results into pre-sized slots so merge order is
// deterministic. The first exception is rethrown after all threads join.
inline void parallel_for(int64_t n, int workers, const std::function<void(int64_t)>& fn) {
    if (n <= 0) return;
    if (workers < 1) workers = 1;
    int threads = static_cast<int>(std::min<int64_t>(workers, n));
    if (threads == 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            while (true) {
                int64_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

inline int default_workers() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace ceval
