#include <cmath>
#include <cstring>

#include "mpt/kernels.hpp"

namespace mpt::kern {

double biweight(double v) {
  double t = 1.0 - v * v;
  if (t <= 0.0) return 0.0;
  return kBiweightPeak * t * t;
}

double biweight_integral(double v) {
  if (v <= -1.0) return 0.0;
  if (v >= 1.0) return 1.0;
  // (15/16) * (v - 2v^3/3 + v^5/5) + 1/2
  return 0.5 + kBiweightPeak * (v - (2.0 / 3.0) * v * v * v +
                                0.2 * v * v * v * v * v);
}

namespace detail {

void biweight_weights_scalar(const double* x, std::size_t n, double x0,
                             double inv_h, double* w) {
  for (std::size_t i = 0; i < n; ++i) {
    double v = (x[i] - x0) * inv_h;
    double t = 1.0 - v * v;
    w[i] = t > 0.0 ? kBiweightPeak * t * t : 0.0;
  }
}

void accumulate_cells_scalar(const double* x, const double* y,
                             const double* cell, std::size_t n, double x0,
                             double inv_h, int n_cells, CellSums& out) {
  std::memset(&out, 0, sizeof(out));
  (void)n_cells;
  for (std::size_t i = 0; i < n; ++i) {
    double v = (x[i] - x0) * inv_h;
    double t = 1.0 - v * v;
    if (t <= 0.0) continue;
    double w = kBiweightPeak * t * t;
    int c = static_cast<int>(cell[i]);
    double wy = w * y[i];
    out.s0[c] += w;
    out.s1[c] += wy;
    out.s2[c] += wy * y[i];
  }
}

}  // namespace detail

}  // namespace mpt::kern
