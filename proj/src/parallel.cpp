#include "mgs/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace mgs {

namespace {
std::atomic<int> g_threads{0};
}

void set_thread_count(int n) { g_threads.store(n > 0 ? n : 0); }

int thread_count() {
  int n = g_threads.load();
  if (n > 0) return n;
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? int(hw) : 1;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t, int)>& fn,
                  int workers) {
  if (n <= 0) return;
  if (workers <= 0) workers = thread_count();
  workers = int(std::min<std::int64_t>(workers, n));
  if (workers == 1) {
    fn(0, n, 0);
    return;
  }
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) {
    std::int64_t b = w * chunk;
    std::int64_t e = std::min<std::int64_t>(n, b + chunk);
    if (b >= e) continue;
    pool.emplace_back([&fn, b, e, w] { fn(b, e, w); });
  }
  fn(0, std::min<std::int64_t>(n, chunk), 0);
  for (auto& t : pool) t.join();
}

}  // namespace mgs
