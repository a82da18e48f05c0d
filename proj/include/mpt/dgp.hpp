#pragma once

#include <array>
#include <optional>
#include <vector>

#include "mpt/kreg.hpp"
#include "mpt/numerics.hpp"

namespace mpt::dgp {

// One matching-pair link: selection at (to_x, to_z) equals selection at
// (from_x, from_z).
struct MatchingPair {
  double from_x;
  int from_z;
  double to_x;
  int to_z;
};

// ---------------------------------------------------------------------------
// Ordered-choice triangular model:
//   D = 1 if V < kappa1 + beta X + alpha Z
//   D = 3 if V >= kappa2 + beta X + alpha Z, D = 2 otherwise
//   Y = gamma_D * (X + 1) + U,   (U, V) standard bivariate normal, corr rho
//   X ~ Unif[x_low, x_high], Z ~ Bernoulli(z_prob)
// ---------------------------------------------------------------------------
struct OrderedChoiceSpec {
  double alpha = 0.8;
  double beta = 0.4;
  double kappa1 = -0.7;
  double kappa2 = 0.1;
  std::array<double, 3> gammas = {1.5, 3.0, 3.5};
  double rho = 0.5;
  double x_low = -3.0;
  double x_high = 3.0;
  double z_prob = 0.5;

  void validate() const;
};

// Per-observation draw order: x, z, then the two normals (e1, e2) with
// U = e1 and V = rho e1 + sqrt(1-rho^2) e2 (Cholesky of the correlation
// matrix). Normals come from quantile inversion, so the output is a pure
// function of the seed.
kreg::Sample simulate(const OrderedChoiceSpec& spec, std::size_t n,
                      num::RngStream& rng);

// Population propensity vector (p1, p2, p3)(x, z).
std::array<double, 3> true_propensity(const OrderedChoiceSpec& spec, double x,
                                      int z);

struct MatchingPointTruth {
  double x_m1;  // pairs (x0, 0) with (x_m1, 1)
  double x_m2;  // pairs (x0, 1) with (x_m2, 0)
  bool m1_in_support;
  bool m2_in_support;
};
MatchingPointTruth true_matching_points(const OrderedChoiceSpec& spec, double x0);

// Points of the m-connected set x0 + c*alpha/beta (|c| <= max_depth) inside
// the support, each with the chain of matching pairs leading back to x0.
struct MConnectedPoint {
  double x;
  std::vector<MatchingPair> chain;  // empty for x0 itself
};
std::vector<MConnectedPoint> mconnected_chain(const OrderedChoiceSpec& spec,
                                              double x0, int max_depth);

std::array<double, 3> true_m_separable(const OrderedChoiceSpec& spec, double x0);

// Uniform-normalized outcome function g*_d(x0, u) = gamma_d (x0+1) + Phi^{-1}(u).
std::array<double, 3> true_g_nonseparable(const OrderedChoiceSpec& spec,
                                          double x0, double u);

// Population conditional moments of Y | D=d, X=x, Z=z (truncated bivariate
// normal). The CDF is evaluated by quadrature; mean and variance are closed
// form. These are the ground-truth counterparts of the kernel estimators.
double true_cond_mean(const OrderedChoiceSpec& spec, int d, double x, int z);
double true_cond_var(const OrderedChoiceSpec& spec, int d, double x, int z);
double true_cond_cdf(const OrderedChoiceSpec& spec, double y, int d, double x,
                     int z);
double true_cond_pdf(const OrderedChoiceSpec& spec, double y, int d, double x,
                     int z);

// ---------------------------------------------------------------------------
// Two binary endogenous variables recoded into D0 in {1,2,3,4}:
//   D1 = 1(gamma1(X,Z) <= V1), D2 = 1(gamma2(X,Z) <= V2),
//   D0 = 1,2,3,4 for (D1,D2) = (0,0),(0,1),(1,0),(1,1),
//   Y = slope_{D0} * (X + 1) + U with U standard normal independent of
//   (V1, V2); (V1, V2) standard bivariate normal with correlation v_corr.
// ---------------------------------------------------------------------------
struct AffineIndex {
  double intercept = 0.0;
  double b_x = 0.0;
  double b_z = 0.0;
  double operator()(double x, double z) const {
    return intercept + b_x * x + b_z * z;
  }
};

struct TwoBinarySpec {
  AffineIndex gamma1;
  AffineIndex gamma2;
  double v_corr = 0.0;
  std::array<double, 4> slopes = {1.0, 2.0, 3.0, 4.0};
  double x_low = -3.0;
  double x_high = 3.0;
  double z_prob = 0.5;

  void validate() const;
};

kreg::Sample simulate_two_binary(const TwoBinarySpec& spec, std::size_t n,
                                 num::RngStream& rng);

// Population cell probabilities P(D0 = d | X=x, Z=z), d = 1..4.
std::array<double, 4> two_binary_propensity(const TwoBinarySpec& spec, double x,
                                            int z);

}  // namespace mpt::dgp
