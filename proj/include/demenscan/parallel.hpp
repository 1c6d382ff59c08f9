#pragma once

#include <cstddef>
#include <functional>

namespace demenscan {

// Worker cap: DEMENSCAN_THREADS env var, 0 or unset = hardware concurrency.
int thread_budget();
void set_thread_budget(int n);

// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = budget) with a
// static chunk partition. Callers must write results only to per-index slots
// and reduce them in index order afterwards; that keeps every float
// accumulation bit-identical regardless of worker count.
void parallel_for(size_t n, const std::function<void(size_t)>& fn, int threads = 0);

} // namespace demenscan
