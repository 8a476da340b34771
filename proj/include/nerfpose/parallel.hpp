#pragma once

#include <cstddef>
#include <functional>

namespace nerfpose {

// Upper bound on worker threads used by parallel_for. Defaults to the
// hardware concurrency; 1 disables threading.
void set_thread_count(int threads);
int thread_count();

// Calls fn(i) for every i in [0, n). Each index is visited exactly once, so
// callers that write only to slot i get results independent of scheduling.
// Nested calls run serially on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace nerfpose
