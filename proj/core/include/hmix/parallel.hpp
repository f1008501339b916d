#pragma once

#include <cstddef>
#include <functional>

namespace hmix {

/// Runs fn(0..n-1) on up to `jobs` threads (0 means hardware concurrency).
/// Every index runs even if another throws; afterwards the exception from the
/// lowest failing index is rethrown, so failures do not depend on scheduling.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

std::size_t resolve_jobs(std::size_t jobs);

}  // namespace hmix
