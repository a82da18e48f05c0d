#pragma once

#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "mpt/dgp.hpp"
#include "mpt/kreg.hpp"
#include "mpt/matching.hpp"
#include "mpt/numerics.hpp"

namespace mpt::nonseparable {

// ---------------------------------------------------------------------------
// Sieve configuration. Nodes are u_j = j / J; U0 = [u0_lo, u0_hi] is the
// interval where pointwise inference is supported and where the optimal
// weights are used in the second step.
// ---------------------------------------------------------------------------
struct SieveConfig {
  int j_nodes = 15;
  double u0_lo = 0.1;
  double u0_hi = 0.9;
  double lambda = 0.0;  // roughness penalty, off by default
  int max_sweeps = 500;
  double objective_tol = 1e-10;  // relative to the run's starting objective
  int phi_grid = 400;    // argmin grid for the quantile-matching map
  int phi_table = 801;   // tabulation resolution used inside the sieve
  // Line-search effort knobs and the cadence of the (expensive) tail-shift
  // pass relative to the per-node box pass.
  int ls_grid = 12;
  int ls_golden = 32;
  int increment_pass_every = 4;
  // Re-minimize under per-node Sigma_NSP^{-1} weights after the identity
  // step. Off by default: the estimated density ratios in Sigma_NSP are
  // noisy at thin cells and measurably distort the fitted curve; inference
  // accounts for the weight actually used via the GMM sandwich.
  bool optimal_weights = false;
};

// ---------------------------------------------------------------------------
// Moment stack: row k of Psi(g) is sum_d of a per-level contribution
// p_d(row_k) * F_k(map_d(g_d)). The solver only needs the per-level
// contributions, which lets it cache and update them incrementally.
// ---------------------------------------------------------------------------
class PsiSource {
 public:
  virtual ~PsiSource() = default;
  virtual int k_d() const = 0;
  virtual int rows() const = 0;
  virtual void level_contrib(int d, double y, double* out_rows) const = 0;
  virtual std::pair<double, double> y_bounds(int d) const = 0;

  std::vector<double> psi(const std::vector<double>& g) const;
};

// Population stack for the ordered-choice benchmark: analytic propensities,
// quadrature CDFs cached on grids, location-shift phi maps.
class OraclePsi final : public PsiSource {
 public:
  OraclePsi(const dgp::OrderedChoiceSpec& spec, double x0, double y_halfwidth = 4.0);
  int k_d() const override { return 3; }
  int rows() const override { return 4; }
  void level_contrib(int d, double y, double* out_rows) const override;
  std::pair<double, double> y_bounds(int d) const override;

 private:
  struct CellGrid {
    double lo, step;
    std::vector<double> f;
    double operator()(double y) const;
  };
  dgp::OrderedChoiceSpec spec_;
  double x0_, xm1_, xm2_;
  std::array<double, 3> p00_, p01_, pm1_, pm2_;
  std::array<std::pair<double, double>, 3> bounds_;
  // One grid per (level, row).
  std::array<std::array<CellGrid, 4>, 3> cells_;
  std::array<double, 3> shift1_, shift2_;
};

// Sample stack: smoothed-CDF cells at (x0, z) and at the estimated matching
// points, with the quantile-matching maps tabulated once per fit.
class SamplePsi final : public PsiSource {
 public:
  SamplePsi(const kreg::Engine& e, double x0, double xm1, double xm2,
            double h_x, double h_g, double h_0, const SieveConfig& cfg);
  int k_d() const override { return kd_; }
  int rows() const override { return 4; }
  void level_contrib(int d, double y, double* out_rows) const override;
  std::pair<double, double> y_bounds(int d) const override;

  // phi_d(y; xm1) and phi_d(y; xm2) through the tabulated maps.
  double phi1(int d, double y) const;
  double phi2(int d, double y) const;

  // Per-level empirical starting values for the solver.
  std::vector<double> quantile_init(double u) const;

  const kreg::Engine& engine() const { return *e_; }
  double h_g() const { return h_g_; }
  double h_0() const { return h_0_; }
  double x0() const { return x0_; }
  double xm1() const { return xm1_; }
  double xm2() const { return xm2_; }
  double h_x() const { return h_x_; }

  // Smoothed CDF of cell (d, x, z) where x must be one of x0/xm1/xm2.
  double cell_cdf(int d, double x, int z, double y) const;

 private:
  struct PhiTable {
    double lo, step;
    std::vector<double> val;
    double operator()(double y) const;
  };
  const kreg::Engine* e_;
  int kd_;
  double x0_, xm1_, xm2_, h_x_, h_g_, h_0_;
  std::array<double, 8> p00_, p01_, pm1_, pm2_;
  std::vector<std::pair<double, double>> bounds_;
  // Cells indexed [d-1][point(0:x0,1:xm1,2:xm2)][z]
  std::vector<std::array<std::array<kreg::Engine::CellCdf, 2>, 3>> cdf_;
  std::vector<PhiTable> phi1_, phi2_;
};

// The quantile-matching map: y' minimizing the squared CDF mismatch between
// the cell at (d, x_to, z_to) and the target level F(y | d, x_from, z_from),
// by grid scan plus golden-section refinement; plateau ties resolved at the
// midpoint.
double phi_hat(const kreg::Engine& e, double y, int d, double x_from,
               int z_from, double x_to, int z_to, double h_g, double h_0,
               std::pair<double, double> y_bounds, int grid = 400);

// Stacked moment vector at g (benchmark four rows).
std::vector<double> psi_hat(const kreg::Engine& e, const std::vector<double>& g,
                            double x0, double xm1, double xm2, double h_x,
                            double h_g, double h_0, const SieveConfig& cfg);

// ---------------------------------------------------------------------------
// Monotone sieve solver: increment parameterization (first node free inside
// the bounds, nonnegative increments), cyclic coordinate descent with a
// golden-section line search per scalar. Feasibility is exact by
// construction.
// ---------------------------------------------------------------------------
struct SieveSolution {
  std::vector<double> u_nodes;
  std::vector<std::vector<double>> g;  // [node][level]
  double objective = 0.0;
  int sweeps = 0;
  bool converged = false;
};

SieveSolution solve_sieve(const PsiSource& src, const SieveConfig& cfg,
                          const std::vector<num::SmallMatrix>& w_nodes,
                          const std::vector<std::vector<std::vector<double>>>& inits);

struct NonseparableFit {
  std::vector<double> u_nodes;
  std::vector<std::vector<double>> g_hat;  // [node][level], monotone rows
  double objective = 0.0;
  int sweeps = 0;
  bool converged = false;
  double x0 = 0.0, xm1 = 0.0, xm2 = 0.0;
  double h_g = 0.0, h_0 = 0.0;
  std::size_t n = 0;
  // Pointwise inference at u0 (filled by pointwise_inference).
  double u0 = 0.0;
  std::vector<double> g_u0;
  num::SmallMatrix cov_u0;
  std::vector<double> se_u0;
  double j_nsp = 0.0, j_nsp_p = 1.0;
  bool constraint_active_at_u0 = false;
  bool optimal_weights = false;
};

// Piecewise-affine evaluation of the fitted node curve.
std::vector<double> eval_curve(const NonseparableFit& fit, double u);

// Two-step sieve fit: identity weights, then per-node optimal weights
// Sigma_NSP(u_j)^{-1} on U0 (identity elsewhere or when singular).
NonseparableFit fit_nonseparable(const kreg::Engine& e, const kreg::Sample& s,
                                 double x0, double xm1, double xm2, double h_x,
                                 const SieveConfig& cfg, double h_g, double h_0);

// Sigma_NSP at (g, u0) by the printed pattern; exposed for inference and for
// the second-step weights.
num::SmallMatrix sigma_nsp(const SamplePsi& psi, const std::vector<double>& g);

// Fills cov/se/J_NSP at the node u0 (must be a node inside U0).
void pointwise_inference(NonseparableFit& fit, const SamplePsi& psi,
                         const SieveConfig& cfg, double u0);

}  // namespace mpt::nonseparable
