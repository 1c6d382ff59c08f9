#include "demenscan/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace demenscan {

namespace {

int read_env_budget() {
    if (const char* env = std::getenv("DEMENSCAN_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

std::atomic<int> g_budget{0};

} // namespace

int thread_budget() {
    int v = g_budget.load(std::memory_order_relaxed);
    if (v <= 0) {
        v = read_env_budget();
        g_budget.store(v, std::memory_order_relaxed);
    }
    return v;
}

void set_thread_budget(int n) {
    g_budget.store(n > 0 ? n : read_env_budget(), std::memory_order_relaxed);
}

void parallel_for(size_t n, const std::function<void(size_t)>& fn, int threads) {
    if (n == 0) return;
    size_t workers = threads > 0 ? static_cast<size_t>(threads)
                                 : static_cast<size_t>(thread_budget());
    if (workers > n) workers = n;
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }

    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    auto run_chunk = [&](size_t begin, size_t end) {
        try {
            for (size_t i = begin; i < end && !failed.load(std::memory_order_relaxed); ++i) {
                fn(i);
            }
        } catch (...) {
            if (!failed.exchange(true)) first_error = std::current_exception();
        }
    };

    const size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (size_t w = 1; w < workers; ++w) {
        const size_t begin = w * chunk;
        if (begin >= n) break;
        const size_t end = std::min(n, begin + chunk);
        pool.emplace_back(run_chunk, begin, end);
    }
    run_chunk(0, std::min(n, chunk));
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace demenscan
