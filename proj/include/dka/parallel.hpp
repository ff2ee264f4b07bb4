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

namespace dka {

/// Worker cap for library-internal loops. 0 means "use DKA_THREADS or hardware".
inline std::atomic<unsigned>& thread_cap() {
    static std::atomic<unsigned> cap{0};
    return cap;
}

inline unsigned worker_count() {
    unsigned cap = thread_cap().load();
    if (cap == 0) {
        if (const char* env = std::getenv("DKA_THREADS")) {
            try {
                cap = static_cast<unsigned>(std::stoul(env));
            } catch (...) {
                cap = 0;
            }
        }
    }
    if (cap == 0) cap = std::max(1u, std::thread::hardware_concurrency());
    return cap;
}

/// Runs body(i) for i in [0, n). Each index writes only its own output slot,
/// so results do not depend on the number of workers.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    pool.clear();
    if (error) std::rethrow_exception(error);
}

}  // namespace dka
