#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace distdpo {

// Runs fn(0..n-1) across up to `workers` threads. Each index writes only its
// own output slot and derives randomness from its own substream, so results
// are identical for every worker count.
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int count = std::min(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(count);
  for (int t = 0; t < count; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += count) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace distdpo
