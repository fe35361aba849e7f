#pragma once

#include <cstddef>
#include <functional>

namespace spnet {

/// Worker cap: SPNET_THREADS if set, else hardware concurrency.
std::size_t worker_count();

/// Run fn(chunk_index, begin, end) over [0,n) split into fixed-size chunks.
/// Chunks may run on any worker; callers that reduce must do so in chunk
/// order afterwards, which makes results independent of the worker count.
void parallel_chunks(std::size_t n, std::size_t chunk_size,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace spnet
