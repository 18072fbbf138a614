#pragma once

#include <cstddef>
#include <functional>

namespace cityprior {

// Splits [0, n) into num_threads contiguous chunks and runs
// fn(worker_id, begin, end) on each. With num_threads <= 1 everything runs
// on the calling thread. The chunk boundaries depend only on (n, num_threads)
// so per-worker results can be merged in worker order deterministically.
void parallel_for(std::size_t n, int num_threads,
                  const std::function<void(int, std::size_t, std::size_t)>& fn);

int hardware_threads();

}  // namespace cityprior
