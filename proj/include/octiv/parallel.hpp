#pragma once

// Minimal block-parallel loop. Callers must make the body order-independent
// (disjoint writes, integer accumulation, or per-block partials reduced in
// index order) so results do not depend on the thread count.

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace octiv {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

template <typename Fn>
void parallel_for(size_t count, int threads, Fn&& body) {
  threads = resolve_threads(threads);
  if (threads <= 1 || count <= 1) {
    for (size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) return;
      body(i);
    }
  };
  std::vector<std::thread> pool;
  const size_t n_workers = std::min<size_t>(threads, count);
  pool.reserve(n_workers);
  for (size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

} // namespace octiv
