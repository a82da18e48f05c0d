// AVX2 variants of the kernel accumulation loops. Compiled with -mavx2; only
// reached when runtime dispatch selects Backend::avx2.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cstring>

#include "mpt/kernels.hpp"

namespace mpt::kern::detail {

void biweight_weights_avx2(const double* x, std::size_t n, double x0,
                           double inv_h, double* w) {
  const __m256d vx0 = _mm256_set1_pd(x0);
  const __m256d vih = _mm256_set1_pd(inv_h);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d peak = _mm256_set1_pd(kBiweightPeak);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), vx0), vih);
    __m256d t = _mm256_sub_pd(one, _mm256_mul_pd(v, v));
    t = _mm256_max_pd(t, zero);
    _mm256_storeu_pd(w + i, _mm256_mul_pd(peak, _mm256_mul_pd(t, t)));
  }
  for (; i < n; ++i) {
    double v = (x[i] - x0) * inv_h;
    double t = 1.0 - v * v;
    w[i] = t > 0.0 ? kBiweightPeak * t * t : 0.0;
  }
}

void accumulate_cells_avx2(const double* x, const double* y,
                           const double* cell, std::size_t n, double x0,
                           double inv_h, int n_cells, CellSums& out) {
  std::memset(&out, 0, sizeof(out));

  __m256d acc0[kMaxCells];
  __m256d acc1[kMaxCells];
  __m256d acc2[kMaxCells];
  __m256d code[kMaxCells];
  for (int c = 0; c < n_cells; ++c) {
    acc0[c] = _mm256_setzero_pd();
    acc1[c] = _mm256_setzero_pd();
    acc2[c] = _mm256_setzero_pd();
    code[c] = _mm256_set1_pd(static_cast<double>(c));
  }

  const __m256d vx0 = _mm256_set1_pd(x0);
  const __m256d vih = _mm256_set1_pd(inv_h);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d peak = _mm256_set1_pd(kBiweightPeak);
  const __m256d zero = _mm256_setzero_pd();

  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), vx0), vih);
    __m256d t = _mm256_max_pd(_mm256_sub_pd(one, _mm256_mul_pd(v, v)), zero);
    __m256d w = _mm256_mul_pd(peak, _mm256_mul_pd(t, t));
    __m256d yy = _mm256_loadu_pd(y + i);
    __m256d wy = _mm256_mul_pd(w, yy);
    __m256d wyy = _mm256_mul_pd(wy, yy);
    __m256d cc = _mm256_loadu_pd(cell + i);
    for (int c = 0; c < n_cells; ++c) {
      __m256d m = _mm256_cmp_pd(cc, code[c], _CMP_EQ_OQ);
      acc0[c] = _mm256_add_pd(acc0[c], _mm256_and_pd(w, m));
      acc1[c] = _mm256_add_pd(acc1[c], _mm256_and_pd(wy, m));
      acc2[c] = _mm256_add_pd(acc2[c], _mm256_and_pd(wyy, m));
    }
  }

  alignas(32) double lane[4];
  for (int c = 0; c < n_cells; ++c) {
    _mm256_store_pd(lane, acc0[c]);
    out.s0[c] = (lane[0] + lane[1]) + (lane[2] + lane[3]);
    _mm256_store_pd(lane, acc1[c]);
    out.s1[c] = (lane[0] + lane[1]) + (lane[2] + lane[3]);
    _mm256_store_pd(lane, acc2[c]);
    out.s2[c] = (lane[0] + lane[1]) + (lane[2] + lane[3]);
  }

  for (; i < n; ++i) {
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

}  // namespace mpt::kern::detail

#endif  // x86_64
