#pragma once

#include <cstdint>
#include <functional>

namespace tpn {

// Upper bound on worker threads used inside kernels (renderer, sampling).
void set_num_threads(int n);
int num_threads();

// Splits [0, n) into fixed chunks of `chunk` items and runs fn(chunk_index,
// begin, end) for each, possibly concurrently. Chunk boundaries depend only
// on n and chunk, never on the thread count, so per-chunk partial results
// reduced in chunk order are bit-identical under any schedule.
void parallel_chunks(int64_t n, int64_t chunk,
                     const std::function<void(int64_t, int64_t, int64_t)>& fn);

inline int64_t chunk_count(int64_t n, int64_t chunk) { return (n + chunk - 1) / chunk; }

}  // namespace tpn
