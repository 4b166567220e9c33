#pragma once

#include <cstdint>
#include <functional>

namespace topformer {

/// Sets the worker count used by the tensor kernels. Clamped to >= 1.
void set_num_threads(int n);
int num_threads();

/// Runs fn over [begin, end) split into contiguous chunks, one per worker.
/// Chunk boundaries depend only on the range and worker count, never on
/// scheduling, so any value computed per-index is reproducible.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace topformer
