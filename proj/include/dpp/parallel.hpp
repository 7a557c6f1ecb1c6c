#pragma once

#include <functional>

namespace dpp {

// Worker cap for internal parallelism. Reads DPP_THREADS once per process;
// 0 or unset means hardware concurrency.
int max_threads();

// Runs fn(i) for i in [begin, end) across up to max_threads() workers in
// contiguous chunks. Each index is computed independently, so results do not
// depend on the thread count. Falls back to a plain loop for small ranges.
void parallel_for(int begin, int end, const std::function<void(int)>& fn);

}  // namespace dpp
