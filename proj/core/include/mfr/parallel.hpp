// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace mfr {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? int(hw) : 1;
}

/// Runs fn(i) for i in [begin, end). Work items must be independent and write
/// disjoint outputs; the item decomposition is fixed so results do not depend
/// on the worker count or on scheduling.
inline void parallel_for(int64_t begin, int64_t end, int threads,
                         const std::function<void(int64_t)>& fn) {
    const int64_t n = end - begin;
    if (n <= 0) return;
    int workers = resolve_threads(threads);
    if (workers > n) workers = int(n);
    if (workers <= 1) {
        for (int64_t i = begin; i < end; ++i) fn(i);
        return;
    }

    std::atomic<int64_t> next(begin);
    std::exception_ptr error;
    std::atomic<bool> failed(false);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                int64_t i = next.fetch_add(1);
                if (i >= end || failed.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    if (!failed.exchange(true)) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace mfr
