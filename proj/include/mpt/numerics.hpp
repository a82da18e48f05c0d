#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "mpt/errors.hpp"

namespace mpt::num {

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

// Standard normal CDF via the complementary error function,
// Phi(x) = erfc(-x / sqrt(2)) / 2. Absolute error well below 1e-10.
double std_normal_cdf(double x);

// Standard normal density.
double std_normal_pdf(double x);

// Standard normal quantile. Rational initial guess refined by one Halley
// step on std_normal_cdf; rejects p outside (0, 1).
double std_normal_quantile(double p);

// Chi-square survival function P(X > x) for the two degrees of freedom the
// J tests use. k=1: 2*(1 - Phi(sqrt(x))); k=2: exp(-x/2).
// Throws InvalidArgument for any other k.
double chi_square_sf(double x, int k);

// Upper critical value: chi_square_sf(result, k) == alpha. Closed forms for
// k in {1,2}; same domain restriction as chi_square_sf.
double chi_square_critical(int k, double alpha);

// ---------------------------------------------------------------------------
// Small dense matrices (row-major, dimensions <= 8)
// ---------------------------------------------------------------------------

class SmallMatrix {
 public:
  static constexpr int kMaxDim = 8;

  SmallMatrix() : rows_(0), cols_(0) {}
  SmallMatrix(int rows, int cols);
  static SmallMatrix identity(int n);
  static SmallMatrix column(const std::vector<double>& v);

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  double& operator()(int r, int c) { return a_[r * cols_ + c]; }
  double operator()(int r, int c) const { return a_[r * cols_ + c]; }

  SmallMatrix transpose() const;
  SmallMatrix operator*(const SmallMatrix& rhs) const;
  SmallMatrix operator+(const SmallMatrix& rhs) const;
  SmallMatrix operator-(const SmallMatrix& rhs) const;
  SmallMatrix scaled(double c) const;

  bool is_symmetric(double tol = 1e-9) const;

  // Maximum absolute entry.
  double max_abs() const;

 private:
  int rows_, cols_;
  std::array<double, kMaxDim * kMaxDim> a_{};
};

// Solves A X = B for symmetric positive definite A by Cholesky
// factorization. Throws SingularMatrix when the smallest pivot is below
// 1e-12 times the largest pivot (a rank-condition failure downstream).
SmallMatrix solve_psd(const SmallMatrix& a, const SmallMatrix& b);

// Inverse through solve_psd against the identity.
SmallMatrix inverse_psd(const SmallMatrix& a);

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
std::vector<double> symmetric_eigenvalues(const SmallMatrix& a);

// Ratio of largest to smallest singular value (via eigenvalues of A'A).
double condition_number(const SmallMatrix& a);

// ---------------------------------------------------------------------------
// Random stream
// ---------------------------------------------------------------------------

// SplitMix64: 64-bit counter generator with a fixed mixing function
// (Steele, Lea & Flood 2014). Identical seeds give identical sequences on
// every platform; one stream is owned by one logical task at a time.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform draw strictly inside (0, 1): (k + 0.5) * 2^-53 with k < 2^53.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Uniform on [lo, hi].
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal by inversion; exactly reproducible given the seed.
  double normal() { return std_normal_quantile(uniform01()); }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::uint64_t state_;
};

}  // namespace mpt::num
