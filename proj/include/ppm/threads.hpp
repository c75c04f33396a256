#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace ppm {

/// Worker count: PPM_THREADS when set (min 1), else the hardware count.
inline unsigned thread_count() {
  if (const char* env = std::getenv("PPM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

/// Runs fn(chunk_index, begin, end) over [0, n) split into fixed-size
/// chunks. Chunk boundaries depend only on n and chunk_size, never on the
/// worker count, so chunk-local reductions combined in chunk order give
/// bit-identical results for any PPM_THREADS.
inline void parallel_chunks(std::size_t n, std::size_t chunk_size,
                            const std::function<void(std::size_t, std::size_t,
                                                     std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t nchunks = (n + chunk_size - 1) / chunk_size;
  const unsigned workers = std::min<std::size_t>(thread_count(), nchunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < nchunks; ++c) {
      fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
    }
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t c = w; c < nchunks; c += workers) {
        fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace ppm
