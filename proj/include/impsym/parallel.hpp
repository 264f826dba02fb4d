#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace impsym {

/// Splits [0, count) into `jobs` contiguous chunks and runs `fn(chunk, begin,
/// end)` on each, one thread per chunk. Chunk boundaries depend only on
/// (count, jobs), so callers that merge per-chunk results in chunk order get
/// results independent of scheduling. The first exception is rethrown.
inline void parallel_chunks(std::size_t count, std::size_t jobs,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count == 0 ? 1 : count));
  if (jobs == 1) {
    fn(0, 0, count);
    return;
  }
  std::vector<std::exception_ptr> errors(jobs);
  {
    std::vector<std::jthread> pool;
    pool.reserve(jobs);
    for (std::size_t j = 0; j < jobs; ++j) {
      const std::size_t begin = count * j / jobs;
      const std::size_t end = count * (j + 1) / jobs;
      pool.emplace_back([&, j, begin, end] {
        try {
          fn(j, begin, end);
        } catch (...) {
          errors[j] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace impsym
