// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace ternarycl {

/// Runs fn(i, worker) for i in [0, n) on `threads` workers, each taking a
/// contiguous block of indices. The first exception is rethrown after all
/// workers joined. threads <= 1 runs inline.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t index, std::size_t worker)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  threads = std::min(threads, n);
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t begin = n * w / threads, end = n * (w + 1) / threads;
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Worker count from TERNARYCL_THREADS, defaulting to 1.
std::size_t default_thread_count();

}  // namespace ternarycl
