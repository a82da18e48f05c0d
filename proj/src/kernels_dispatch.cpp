#include <atomic>
#include <cstdlib>
#include <cstring>

#include "mpt/kernels.hpp"

namespace mpt::kern {

namespace {

Backend detect_backend() {
  const char* env = std::getenv("MPT_KERNEL_BACKEND");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0 && avx2_available()) return Backend::avx2;
    // "auto" or anything else falls through to detection.
  }
  return avx2_available() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{detect_backend()};
  return slot;
}

}  // namespace

bool avx2_available() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

Backend active_backend() { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_available()) b = Backend::scalar;
  backend_slot().store(b, std::memory_order_relaxed);
}

void accumulate_cells(const double* x, const double* y, const double* cell,
                      std::size_t n, double x0, double inv_h, int n_cells,
                      CellSums& out) {
#if defined(__x86_64__) || defined(_M_X64)
  if (active_backend() == Backend::avx2) {
    detail::accumulate_cells_avx2(x, y, cell, n, x0, inv_h, n_cells, out);
    return;
  }
#endif
  detail::accumulate_cells_scalar(x, y, cell, n, x0, inv_h, n_cells, out);
}

void biweight_weights(const double* x, std::size_t n, double x0, double inv_h,
                      double* w) {
#if defined(__x86_64__) || defined(_M_X64)
  if (active_backend() == Backend::avx2) {
    detail::biweight_weights_avx2(x, n, x0, inv_h, w);
    return;
  }
#endif
  detail::biweight_weights_scalar(x, n, x0, inv_h, w);
}

}  // namespace mpt::kern
