#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "mpt/kreg.hpp"
#include "mpt/numerics.hpp"

namespace mpt::matching {

// Propensity vectors as a function of (x, z): either Nadaraya-Watson
// estimates on a sample or an analytic population oracle. Matching-point
// search only needs this interface.
class PropensitySource {
 public:
  virtual ~PropensitySource() = default;
  virtual std::vector<double> p(double x, int z) const = 0;
  virtual int k_d() const = 0;
};

class SamplePropensities final : public PropensitySource {
 public:
  SamplePropensities(const kreg::Engine& e, double h_x) : e_(&e), h_(h_x) {}
  std::vector<double> p(double x, int z) const override {
    return e_->propensity(x, z, h_);
  }
  int k_d() const override { return e_->k_d(); }

 private:
  const kreg::Engine* e_;
  double h_;
};

class FunctionPropensities final : public PropensitySource {
 public:
  FunctionPropensities(std::function<std::vector<double>(double, int)> fn, int kd)
      : fn_(std::move(fn)), kd_(kd) {}
  std::vector<double> p(double x, int z) const override { return fn_(x, z); }
  int k_d() const override { return kd_; }

 private:
  std::function<std::vector<double>(double, int)> fn_;
  int kd_;
};

enum class SlackMode { point, set };

struct MatchingConfig {
  double x0 = 0.0;
  int grid_size = 500;
  SlackMode slack_mode = SlackMode::point;
  double slack_multiplier = 1.0;  // scales c_n inside a_n
  // Continuous refinement controls for refine_isolated.
  int refine_max_iter = 200;
  double refine_tol_scale = 1e-6;  // times sd(X)
};

// a_n = multiplier * sqrt(log n) * c_n with c_n = sqrt(log n / (n h)) + h^2.
double slack_a_n(std::size_t n, double h_x, double multiplier = 1.0);

struct GridPair {
  int i1, i2;
  double x1, x2;
  double q;
};

// Moment distance: stacked propensity differences between the two candidate
// matched cells and the anchors at x0, weighted by W (size 2(k_d - 1)).
//   block 1: p_d(x1, 1) - p_d(x0, 0), d = 1..k_d-1
//   block 2: p_d(x2, 0) - p_d(x0, 1)
std::vector<double> delta_p(const PropensitySource& src, double x0, double x1,
                            double x2);
double qx_objective(const PropensitySource& src, double x0, double x1,
                    double x2, const num::SmallMatrix& w);
double qx_objective(const kreg::Sample& s, double x0, double x1, double x2,
                    const num::SmallMatrix& w, double h_x);

// Grid search over S0(X)^2. Point mode returns the singleton argmin (ties
// broken by smallest x1 then smallest x2); set mode returns every pair
// within a_n^2 of the grid minimum.
struct SetEstimate {
  std::vector<GridPair> pairs;  // point mode: exactly one
  double q_min = 0.0;
  double a_n = 0.0;
  double grid_step = 0.0;
  std::vector<double> grid;  // the axis nodes
};
SetEstimate estimate_matching_set(const PropensitySource& src,
                                  const kreg::Interval& s0,
                                  const MatchingConfig& cfg,
                                  const num::SmallMatrix& w, double a_n);

// Isolated-cluster refinement: cover the set estimate with squares of side
// b_n = log(n) a_n, then minimize continuously (alternating golden-section)
// inside each square that fully covers one cluster.
struct RefinedPair {
  double x1, x2;
  double q;
  int cluster_size;
};
std::vector<RefinedPair> refine_isolated(const PropensitySource& src,
                                         const SetEstimate& set,
                                         const MatchingConfig& cfg,
                                         const num::SmallMatrix& w, double b_n,
                                         const kreg::Interval& s0,
                                         double x_scale);

struct JTests {
  double j_x = 0.0, j_x_p = 1.0;    // joint, chi^2 with 2(k_d - 2) df
  double j_x1 = 0.0, j_x1_p = 1.0;  // block tests, chi^2 with k_d - 2 df
  double j_x2 = 0.0, j_x2_p = 1.0;
  int df_joint = 0, df_block = 0;
};

struct MatchingFit {
  double xm1_hat = 0.0, xm2_hat = 0.0;
  double se1 = 0.0, se2 = 0.0;
  std::vector<double> delta_p_hat;       // at the estimates
  num::SmallMatrix sigma_x;              // kappa * blockdiag(Sigma_x1, Sigma_x2)
  num::SmallMatrix sigma_x1, sigma_x2;   // unscaled blocks
  JTests j;
  std::vector<GridPair> set_estimate;    // set mode; identity-weighted slack
  std::size_t n = 0;
  double h_x = 0.0;
  double x0 = 0.0;
  double q_min = 0.0;
};

// Two-step GMM: identity-weighted grid search, Sigma_x from the first-step
// estimates, optimally weighted re-search, delta-method standard errors and
// the J statistics. Throws WeakIdentification when Sigma_x or the Jacobian
// quadratic form is singular.
MatchingFit two_step_matching(const kreg::Engine& e, const kreg::Sample& s,
                              const MatchingConfig& cfg, double h_x);
MatchingFit two_step_matching(const kreg::Sample& s, const MatchingConfig& cfg,
                              double h_x,
                              double min_effective_count = 10.0);

JTests jtest_matching(const MatchingFit& fit);

}  // namespace mpt::matching
