#ifndef DR_THREADING_HPP
#define DR_THREADING_HPP

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace dr {

// Process-wide worker count for parallel_for. 0 = hardware_concurrency.
void set_job_count(int jobs);
int job_count();

// Runs fn(i) for i in [0, n). Work is split into fixed contiguous chunks so
// every invocation sees the same partitioning regardless of scheduling.
// Callers must only write to disjoint state per index; reductions happen
// after the join, in index order, so results are identical for any job count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace dr

#endif
