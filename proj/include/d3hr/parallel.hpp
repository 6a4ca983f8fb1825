#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace d3hr {

/// Worker count from D3HR_THREADS (0 or unset = hardware concurrency).
inline std::size_t worker_count() {
    std::size_t n = 0;
    if (const char* env = std::getenv("D3HR_THREADS")) n = static_cast<std::size_t>(std::strtoull(env, nullptr, 10));
    if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

namespace detail {
// Set on worker threads so nested parallel regions run inline.
inline thread_local bool in_parallel_region = false;
}  // namespace detail

/// Splits [0, count) into contiguous chunks and runs fn(chunk, begin, end) on each.
/// Chunk boundaries depend only on count and the worker count, never on timing.
template <class Fn>
void parallel_chunks(std::size_t count, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1 || detail::in_parallel_region) {
        if (count > 0) fn(std::size_t{0}, std::size_t{0}, count);
        return;
    }
    std::vector<std::thread> threads;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const std::size_t base = count / workers, extra = count % workers;
    std::size_t begin = 0;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t end = begin + base + (w < extra ? 1 : 0);
        threads.emplace_back([&, w, begin, end] {
            detail::in_parallel_region = true;
            try {
                fn(w, begin, end);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
        begin = end;
    }
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
}

template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    parallel_chunks(count, worker_count(), [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) fn(i);
    });
}

}  // namespace d3hr
