#pragma once

#include <cstddef>
#include <functional>

namespace conveq {

/// Worker count: hardware concurrency, capped by CONVEQ_THREADS when set.
int thread_count();

/// Runs body(i) for i in [0, n) on up to thread_count() threads. Bodies
/// that write only their own slot give thread-count independent results.
/// The first exception is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace conveq
