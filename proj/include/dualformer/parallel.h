// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_PARALLEL_H_
#define DUALFORMER_PARALLEL_H_

#include <cstdint>
#include <functional>

namespace dualformer {

/// Worker cap. Defaults to hardware concurrency, overridden by the
/// DF_THREADS environment variable or set_thread_count().
int thread_count();
void set_thread_count(int n);

/// Runs fn(i) for i in [begin, end) on up to thread_count() threads with a
/// static contiguous partition. Callers must only write state owned by
/// index i, which keeps results independent of the thread count.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn,
                  std::int64_t min_work_per_thread = 1);

}  // namespace dualformer

#endif  // DUALFORMER_PARALLEL_H_
