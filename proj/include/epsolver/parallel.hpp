#pragma once

#include <cstddef>
#include <functional>

namespace epsolver {

// Worker count: hardware concurrency capped by EPSOLVER_THREADS when set.
int worker_count();

// Splits [0, n) into contiguous chunks, one per worker. Each index is handled
// by exactly one call, so per-index results do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace epsolver
