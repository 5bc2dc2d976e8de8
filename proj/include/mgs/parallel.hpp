#pragma once

#include <cstdint>
#include <functional>

namespace mgs {

// Process-wide worker cap, set once by the CLI --threads flag.
void set_thread_count(int n);
int thread_count();

// Splits [0, n) into `workers` contiguous chunks and runs
// fn(begin, end, worker_index) on each, one chunk per worker.
// The decomposition depends only on (n, workers), so results that are
// reduced in worker-index order are reproducible for a fixed thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t, int)>& fn,
                  int workers = 0);

}  // namespace mgs
