#pragma once

#include <cstddef>
#include <functional>

namespace afflow {

// Worker count for data-parallel kernels: AFFLOW_THREADS when set, otherwise
// the hardware concurrency. Always >= 1.
std::size_t thread_count();

// Runs fn(i) for i in [begin, end) over contiguous chunks, one per worker.
// fn must only write state owned by index i.
void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& fn);

}  // namespace afflow
