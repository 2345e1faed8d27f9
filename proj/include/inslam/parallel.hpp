#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace inslam {

// Static-partition parallel loop over [0, n). Each index is processed exactly
// once and results must be written to disjoint slots, so output order (and
// therefore every downstream byte) is independent of scheduling. The first
// exception thrown by any worker is rethrown on the calling thread.
inline void parallel_for(size_t n, const std::function<void(size_t)>& body) {
    const size_t hw = std::max<size_t>(1, std::thread::hardware_concurrency());
    const size_t workers = std::min<size_t>(hw, n);
    if (workers <= 1 || n < 4) {
        for (size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            try {
                for (size_t i = w; i < n; i += workers) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (std::thread& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace inslam
