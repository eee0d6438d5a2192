#pragma once

#include <cstddef>
#include <functional>

namespace rflab {

/// Number of worker threads used by parallel loops. Defaults to the value
/// of the RFLAB_THREADS environment variable if set, otherwise to the
/// hardware concurrency. Results never depend on this value: work items are
/// indexed, each writes its own slot, and reductions run in index order.
int thread_count();
void set_thread_count(int n);

/// Run fn(i) for i in [0, n). fn must only touch state owned by item i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace rflab
