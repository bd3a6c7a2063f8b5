#pragma once

// Minimal fork-join helper. Work items must be independent; results are
// written to pre-sized slots so the outcome does not depend on the thread
// count.

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace conset {

inline unsigned default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Runs fn(i) for i in [0, count). n_threads <= 1 degrades to a plain loop.
template <typename Fn>
void parallel_for(std::size_t count, unsigned n_threads, Fn&& fn) {
  if (count == 0) return;
  n_threads = std::max(1u, std::min<unsigned>(n_threads, static_cast<unsigned>(count)));
  if (n_threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(n_threads);
  for (unsigned t = 0; t < n_threads; ++t) {
    workers.emplace_back([&, t] {
      // Static block partition: thread t handles [lo, hi).
      const std::size_t lo = count * t / n_threads;
      const std::size_t hi = count * (t + 1) / n_threads;
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace conset
