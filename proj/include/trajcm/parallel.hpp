#pragma once

#include <cstddef>
#include <functional>

namespace trajcm {

/// Worker count used by parallel_for. Initialized from TRAJCM_THREADS,
/// falling back to the hardware concurrency.
int thread_count();
void set_thread_count(int n);

/// Calls fn(i) for every i in [0, n). Each index must only write outputs it
/// owns; results are then independent of the number of workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace trajcm
