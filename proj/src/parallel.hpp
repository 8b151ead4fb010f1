#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

namespace vrgcn::detail {

// OpenMP loop over [0, n) that rethrows the first exception on the calling thread.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  std::exception_ptr error;
  std::mutex guard;
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long long i = 0; i < count; ++i) {
    try {
      f(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(guard);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace vrgcn::detail
