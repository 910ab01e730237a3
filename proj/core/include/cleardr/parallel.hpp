#pragma once

#include <cstddef>
#include <functional>

namespace cleardr {

// Worker count for internal parallelism. Defaults to the hardware concurrency,
// capped by the CLEARDR_THREADS environment variable when it is set.
std::size_t thread_count();

// Overrides thread_count() for the current process; 0 restores the default.
void set_thread_count(std::size_t threads);

// Runs body(i) for i in [0, count). Each index is executed exactly once; work
// split is static so results never depend on scheduling as long as the body
// writes disjoint output.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace cleardr
