// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace a2f {

// Number of worker threads the pool was built with (A2F_THREADS env
// overrides hardware concurrency).
int thread_count();

// Runs fn over [0,n) split into one contiguous chunk per thread. The chunk
// boundaries depend only on n and the pool size, and every index is written
// by exactly one thread, so results are identical to a sequential run.
// Small jobs (n < min_grain * 2) run inline.
void parallel_for(size_t n, size_t min_grain,
                  const std::function<void(size_t, size_t)>& fn);

}  // namespace a2f
