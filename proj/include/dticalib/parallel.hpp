#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace dticalib {

/// Worker count: DTICALIB_THREADS if set and positive, otherwise the
/// hardware concurrency.
inline std::size_t worker_count() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DTICALIB_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) n = static_cast<std::size_t>(v);
        } catch (...) {
        }
    }
    return n;
}

/// Runs body(i) for i in [0, n). Each index must write only to its own
/// output slot. The first exception thrown by any index is rethrown after
/// all workers have joined.
template <typename Body>
void parallel_for(std::size_t n, Body&& body, std::size_t workers = worker_count()) {
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = n;
                }
            }
        });
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace dticalib
