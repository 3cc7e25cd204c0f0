#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace windgrid {

// Worker cap for the few data-parallel loops (GEMM rows). Every parallel loop
// writes disjoint output ranges, so results are bit-identical to sequential.
int num_threads();
void set_num_threads(int n);

template <typename F>
void parallel_for(std::int64_t n, F&& fn) {
  const int workers = num_threads();
  if (workers <= 1 || n < 2) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int use = static_cast<int>(std::min<std::int64_t>(workers, n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(use));
  const std::int64_t chunk = (n + use - 1) / use;
  for (int w = 0; w < use; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min<std::int64_t>(lo + chunk, n);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace windgrid
