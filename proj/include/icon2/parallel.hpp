#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace icon2 {

inline unsigned configured_thread_count() {
    if (const char* env = std::getenv("ICON2_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : std::min(hw, 8u);
}

// Runs fn(i) for i in [0, n). Results must be written to per-index slots so
// the outcome does not depend on scheduling. The first exception thrown by
// any worker is rethrown on the calling thread.
template <typename Fn>
void parallel_for(size_t n, Fn&& fn) {
    const unsigned threads = std::min<size_t>(configured_thread_count(), n);
    if (threads <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::atomic<size_t> next{0};
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace icon2
