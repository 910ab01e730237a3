#include "cleardr/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace cleardr {
namespace {

std::atomic<std::size_t> g_override{0};

std::size_t env_threads() {
  static const std::size_t cached = [] {
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    const char* env = std::getenv("CLEARDR_THREADS");
    if (env == nullptr || *env == '\0') return hw;
    try {
      const long v = std::stol(env);
      if (v >= 1) return std::min(hw, static_cast<std::size_t>(v));
    } catch (const std::exception&) {
    }
    return hw;
  }();
  return cached;
}

}  // namespace

std::size_t thread_count() {
  const std::size_t o = g_override.load(std::memory_order_relaxed);
  return o != 0 ? o : env_threads();
}

void set_thread_count(std::size_t threads) { g_override.store(threads, std::memory_order_relaxed); }

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(thread_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto run = [&](std::size_t worker) {
    // Contiguous static blocks.
    const std::size_t begin = count * worker / workers;
    const std::size_t end = count * (worker + 1) / workers;
    try {
      for (std::size_t i = begin; i < end; ++i) body(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(run, t);
  run(0);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace cleardr
