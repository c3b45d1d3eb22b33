#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace moessm::detail {

// Runs fn(worker, begin, end) over a contiguous split of [0, count).
// Exceptions from workers are rethrown on the calling thread.
template <typename Fn>
void parallel_ranges(std::size_t count, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    fn(std::size_t{0}, std::size_t{0}, count);
    return;
  }
  threads = std::min(threads, count);
  std::exception_ptr error;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      const std::size_t begin = count * w / threads;
      const std::size_t end = count * (w + 1) / threads;
      pool.emplace_back([&, w, begin, end] {
        try {
          fn(w, begin, end);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace moessm::detail
