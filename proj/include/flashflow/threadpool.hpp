#pragma once

#include <cstddef>
#include <functional>

namespace flashflow {

// Worker count: FLASHFLOW_THREADS if set (min 1), else hardware concurrency.
int worker_count();

// Runs fn(i) for i in [0, n), statically partitioned across workers.
// Falls back to a plain loop when one worker suffices.  fn must be safe to
// call concurrently for distinct i.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace flashflow
