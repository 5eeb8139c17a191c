#pragma once

#include <cstddef>
#include <functional>

namespace heparl {

/// Runs fn(begin, end) over a contiguous partition of [0, n). Workers write
/// to disjoint output slots, so results do not depend on the thread count
/// (HEPARL_THREADS=1 forces sequential execution).
void parallel_chunks(std::size_t n,
                     const std::function<void(std::size_t, std::size_t)>& fn);

} // namespace heparl
