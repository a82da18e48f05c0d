#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mpt/errors.hpp"
#include "mpt/kernels.hpp"

namespace mpt::kreg {

// ---------------------------------------------------------------------------
// Sample: the universal estimation input.
// y real outcome, d in {1..k_d}, x real covariate, z in {0..k_z-1}.
// ---------------------------------------------------------------------------
struct Sample {
  std::vector<double> y;
  std::vector<std::uint8_t> d;
  std::vector<double> x;
  std::vector<std::uint8_t> z;
  int k_d = 0;
  int k_z = 0;

  std::size_t n() const { return y.size(); }

  // Checks lengths, supports and finiteness; throws InvalidArgument.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Bandwidths. h_x drives the matching stage, h_m the separable outcome
// stage, h_g the CDF stage and h_0 the CDF smoothing in y-direction.
// Defaults: h_x = c_x * sd(X) * n^{-1/4}, h_m = c_m * h_x, h_g = c_g * h_x,
// h_0 = h_g^{3/2}; the undersmoothing ratios c_m, c_g < 1 are enforced.
// ---------------------------------------------------------------------------
struct BandwidthConfig {
  double c_x = 1.0;
  double c_m = 0.7;
  double c_g = 0.7;
  double c_0 = 1.0;  // multiplier on h_g^{3/2}
};

struct Bandwidths {
  double h_x = 0.0;
  double h_m = 0.0;
  double h_g = 0.0;
  double h_0 = 0.0;

  static Bandwidths from_sample(const Sample& s, const BandwidthConfig& cfg = {});
  void validate() const;
};

// Trimmed support S0(X): order statistics at 2% / 98% shrunk inward by one
// h_x bandwidth. Throws EmptyTrimmedSupport when degenerate.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
  double width() const { return hi - lo; }
};
Interval trimmed_support(const Sample& s, double h_x);

double sample_sd(const std::vector<double>& v);

// ---------------------------------------------------------------------------
// Engine: sample sorted by (x, y, d, z) with per-row cell codes, providing
// windowed kernel sums for all estimators. Sorting by a total order makes
// every output invariant under permutation of the input rows.
// ---------------------------------------------------------------------------
class Engine {
 public:
  // min_effective_count: denominator floor in units of K(0); a point is
  // estimable when the relevant kernel-weighted count reaches this many
  // center-equivalent observations.
  explicit Engine(const Sample& s, double min_effective_count = 10.0);

  int k_d() const { return k_d_; }
  int k_z() const { return k_z_; }
  std::size_t n() const { return x_.size(); }
  double min_effective_count() const { return min_count_; }

  // All kernel-weighted cell sums at center x0 / bandwidth h.
  struct Moments {
    kern::CellSums sums;
    int k_d, k_z;
    double cell0(int d, int z) const { return sums.s0[(d - 1) * k_z + z]; }
    double cell1(int d, int z) const { return sums.s1[(d - 1) * k_z + z]; }
    double cell2(int d, int z) const { return sums.s2[(d - 1) * k_z + z]; }
    double den_z(int z) const {
      double s = 0.0;
      for (int d = 1; d <= k_d; ++d) s += cell0(d, z);
      return s;
    }
  };
  Moments moments(double x0, double h) const;

  // Generalized propensity vector (p_1..p_kd)(x, z); entries sum to one by
  // the shared denominator. Throws InsufficientLocalData below the floor.
  std::vector<double> propensity(double x0, int z, double h) const;
  std::vector<double> propensity(const Moments& m, int z) const;

  // Nadaraya-Watson conditional mean of Y given (D=d, X=x0, Z=z).
  double cond_mean(int d, double x0, int z, double h) const;
  // Conditional variance via NW(Y^2) - NW(Y)^2, floored at 1e-10.
  double cond_var(int d, double x0, int z, double h) const;

  // Kernel-numerator density estimates.
  double f_xz(double x0, int z, double h) const;
  double f_dxz(int d, double x0, int z, double h) const;

  // Smoothed conditional CDF support: per-cell view with weights sorted by
  // y and prefix sums, so each evaluation costs a binary search plus the
  // h_0-band.
  class CellCdf {
   public:
    double operator()(double y, double h_0) const;
    double weight_sum() const { return wsum_; }
    double y_min() const { return ys_.empty() ? 0.0 : ys_.front(); }
    double y_max() const { return ys_.empty() ? 0.0 : ys_.back(); }

   private:
    friend class Engine;
    std::vector<double> ys_;   // cell outcomes ascending
    std::vector<double> w_;    // kernel weights, matching order
    std::vector<double> wcum_; // prefix sums of w_
    double wsum_ = 0.0;
  };
  CellCdf cell_cdf(int d, double x0, int z, double h_g) const;

  double smoothed_cond_cdf(double y, int d, double x0, int z, double h_g,
                           double h_0) const;

 private:
  struct Window {
    std::size_t lo, hi;
  };
  Window window(double x0, double h) const;

  std::vector<double> x_, y_, cell_;
  std::vector<std::uint8_t> d_, z_;
  int k_d_, k_z_;
  double min_count_;
};

// Spec-level wrappers operating directly on a Sample.
double kernel(double v);
double integrated_kernel(double v);
double kappa_constant();
double nw_propensity(const Sample& s, int d, double x, int z, double h);
double nw_cond_mean(const Sample& s, int d, double x, int z, double h);
double smoothed_cond_cdf(const Sample& s, double y, int d, double x, int z,
                         double h_g, double h_0);

}  // namespace mpt::kreg
