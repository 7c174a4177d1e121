#pragma once

#include <cstddef>
#include <functional>

namespace fsc {

/// Worker count: FSC_THREADS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t thread_budget();

/// Runs fn(i) for i in [0, n) on up to thread_budget() threads. Work items
/// must be independent; results are written by index so the outcome does
/// not depend on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace fsc
