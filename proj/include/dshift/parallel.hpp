#pragma once

// Every data-parallel kernel comes in two builds selected by Exec: a plain
// serial loop kept as the reference, and an OpenMP loop. Both write
// per-item partial results into their own slots and reduce them in index
// order, so the two builds return bit-identical values for any thread
// count.

#include <cstddef>
#include <exception>
#include <mutex>

#include <omp.h>

namespace dshift {

enum class Exec { Serial, Parallel };

/// Calls body(i) for i in [0, n). An exception thrown by any iteration is
/// rethrown on the calling thread after the loop.
template <class Body>
void for_each_index(std::size_t n, Exec exec, Body&& body) {
  if (exec == Exec::Parallel && n > 1) {
    const auto count = static_cast<long long>(n);
    std::exception_ptr failure;
    std::mutex failure_mutex;
#pragma omp parallel for schedule(dynamic, 4)
    for (long long i = 0; i < count; ++i) {
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  } else {
    for (std::size_t i = 0; i < n; ++i) body(i);
  }
}

inline int max_threads() { return omp_get_max_threads(); }

}  // namespace dshift
