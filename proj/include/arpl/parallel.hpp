#pragma once

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace arpl {

// Thread count: ARPL_THREADS env var, else hardware concurrency.
inline int thread_count() {
  if (const char* env = std::getenv("ARPL_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n). Work is split into chunks whose boundaries
// depend only on n, never on the thread count, so any caller that reduces
// per-chunk partial results in chunk order gets bitwise-reproducible output.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const int threads = thread_count();
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int spawn = std::min<std::size_t>(threads, n) - 1;
  pool.reserve(spawn);
  for (int t = 0; t < spawn; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

// Map-reduce over items grouped into fixed-size chunks. `map` fills the
// accumulator for one chunk; partial results are folded serially in chunk
// order by `fold`.
template <typename Acc, typename MapFn, typename FoldFn>
void chunked_reduce(std::size_t n_items, std::size_t chunk_size, Acc& acc,
                    const MapFn& map, const FoldFn& fold) {
  if (chunk_size == 0) chunk_size = 1;
  const std::size_t n_chunks = (n_items + chunk_size - 1) / chunk_size;
  std::vector<Acc> partial(n_chunks);
  parallel_for(n_chunks, [&](std::size_t c) {
    const std::size_t lo = c * chunk_size;
    const std::size_t hi = std::min(n_items, lo + chunk_size);
    map(lo, hi, partial[c]);
  });
  for (std::size_t c = 0; c < n_chunks; ++c) fold(acc, partial[c]);
}

}  // namespace arpl
