#pragma once

#include <cstddef>
#include <cstdint>

namespace mpt::kern {

// Biweight kernel K(v) = (15/16)(1-v^2)^2 on [-1,1], zero outside.
inline constexpr double kBiweightPeak = 15.0 / 16.0;

double biweight(double v);

// Integrated kernel L(v) = \int_{-1}^{v} K, the quintic antiderivative.
double biweight_integral(double v);

// \int K(v)^2 dv = 5/7 for the biweight.
inline constexpr double kKappa = 5.0 / 7.0;

// ---------------------------------------------------------------------------
// Data-parallel inner loops.
//
// The Nadaraya-Watson estimators reduce to kernel-weighted sums over a
// contiguous window of rows sorted by x. Two implementations of each loop
// are provided: a scalar reference and an AVX2 variant. The active one is
// chosen at load time from CPUID and can be overridden through
// set_backend() or the MPT_KERNEL_BACKEND environment variable
// ("scalar" / "avx2" / "auto"). Both are covered by equivalence tests.
// ---------------------------------------------------------------------------

enum class Backend { scalar, avx2 };

bool avx2_available();
Backend active_backend();
void set_backend(Backend b);

inline constexpr int kMaxCells = 32;  // K_D * K_Z upper bound (8 levels x 4)

// Per-cell kernel-weighted sums over one window:
//   s0[c] = sum_i w_i * 1(cell_i == c)          (weighted count)
//   s1[c] = sum_i w_i * y_i * 1(cell_i == c)
//   s2[c] = sum_i w_i * y_i^2 * 1(cell_i == c)
// with w_i = biweight((x_i - x0) * inv_h) and cell codes stored as doubles.
struct CellSums {
  double s0[kMaxCells];
  double s1[kMaxCells];
  double s2[kMaxCells];
};

void accumulate_cells(const double* x, const double* y, const double* cell,
                      std::size_t n, double x0, double inv_h, int n_cells,
                      CellSums& out);

// w[i] = biweight((x[i] - x0) * inv_h).
void biweight_weights(const double* x, std::size_t n, double x0, double inv_h,
                      double* w);

namespace detail {
void accumulate_cells_scalar(const double* x, const double* y,
                             const double* cell, std::size_t n, double x0,
                             double inv_h, int n_cells, CellSums& out);
void biweight_weights_scalar(const double* x, std::size_t n, double x0,
                             double inv_h, double* w);
#if defined(__x86_64__) || defined(_M_X64)
void accumulate_cells_avx2(const double* x, const double* y,
                           const double* cell, std::size_t n, double x0,
                           double inv_h, int n_cells, CellSums& out);
void biweight_weights_avx2(const double* x, std::size_t n, double x0,
                           double inv_h, double* w);
#endif
}  // namespace detail

}  // namespace mpt::kern
