#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace freescale::parallel {

namespace detail {
inline std::atomic<int>& thread_override() {
  static std::atomic<int> value{-1};
  return value;
}

inline int threads_from_env() {
  const char* env = std::getenv("FREESCALE_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  try {
    return std::max(0, std::stoi(env));
  } catch (const std::exception&) {
    return 0;
  }
}
}  // namespace detail

/// Worker count: set_thread_count() wins, else FREESCALE_THREADS, else hardware
/// concurrency. 0 in either source means "auto".
inline int thread_count() {
  int n = detail::thread_override().load();
  if (n < 0) n = detail::threads_from_env();
  if (n == 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return n;
}

inline void set_thread_count(int n) { detail::thread_override().store(n); }

/// Runs body(i) for i in [0, n). Each index is processed by exactly one worker
/// and bodies must not share accumulators, so results do not depend on the
/// number of threads.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run_range = [&](std::size_t begin, std::size_t end) {
    try {
      for (std::size_t i = begin; i < end; ++i) body(i);
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(run_range, begin, end);
  }
  run_range(0, std::min(n, chunk));
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace freescale::parallel
