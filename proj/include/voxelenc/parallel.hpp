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

namespace voxelenc {

namespace detail {

inline std::atomic<std::size_t>& thread_setting() {
  static std::atomic<std::size_t> value{0};
  return value;
}

inline bool& inside_worker() {
  thread_local bool flag = false;
  return flag;
}

}  // namespace detail

/// Worker count used by parallel kernels. Resolution order: set_threads(),
/// VOXELENC_THREADS, hardware concurrency.
inline std::size_t thread_count() {
  std::size_t n = detail::thread_setting().load();
  if (n > 0) return n;
  if (const char* env = std::getenv("VOXELENC_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// 0 restores the default resolution.
inline void set_threads(std::size_t n) { detail::thread_setting().store(n); }

/// Runs body(task) for task in [0, n_tasks) on a bounded set of workers.
///
/// Calls made from inside a worker run serially, so nesting never
/// oversubscribes. Tasks must write disjoint outputs; scheduling order never
/// affects results. The first exception thrown by any task is rethrown.
template <typename Body>
void parallel_for(std::size_t n_tasks, Body&& body) {
  if (n_tasks == 0) return;
  const std::size_t workers =
      detail::inside_worker() ? 1 : std::min(thread_count(), n_tasks);
  if (workers <= 1) {
    for (std::size_t t = 0; t < n_tasks; ++t) body(t);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    detail::inside_worker() = true;
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= n_tasks) break;
      try {
        body(t);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n_tasks);
      }
    }
    detail::inside_worker() = false;
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace voxelenc
