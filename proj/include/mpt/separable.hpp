#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "mpt/dgp.hpp"
#include "mpt/kreg.hpp"
#include "mpt/matching.hpp"
#include "mpt/numerics.hpp"

namespace mpt::separable {

// Cell-level inputs of the separable stage: propensities, conditional means
// and variances of Y, and the joint density f_DXZ. Sample-backed or
// population oracle.
class MomentSource {
 public:
  virtual ~MomentSource() = default;
  virtual std::vector<double> p(double x, int z) const = 0;
  virtual double mean(int d, double x, int z) const = 0;
  virtual double var(int d, double x, int z) const = 0;
  virtual double f_dxz(int d, double x, int z) const = 0;
  virtual int k_d() const = 0;
};

// Nadaraya-Watson moments: propensities at the matching-stage bandwidth h_x,
// outcome means/variances and densities at the smaller h_m.
class SampleMoments final : public MomentSource {
 public:
  SampleMoments(const kreg::Engine& e, double h_x, double h_m)
      : e_(&e), h_x_(h_x), h_m_(h_m) {}
  std::vector<double> p(double x, int z) const override {
    return e_->propensity(x, z, h_x_);
  }
  double mean(int d, double x, int z) const override {
    return e_->cond_mean(d, x, z, h_m_);
  }
  double var(int d, double x, int z) const override {
    return e_->cond_var(d, x, z, h_m_);
  }
  double f_dxz(int d, double x, int z) const override {
    return e_->f_dxz(d, x, z, h_m_);
  }
  int k_d() const override { return e_->k_d(); }
  double h_m() const { return h_m_; }

 private:
  const kreg::Engine* e_;
  double h_x_, h_m_;
};

// Population moments of the ordered-choice model.
class OracleMoments final : public MomentSource {
 public:
  explicit OracleMoments(const dgp::OrderedChoiceSpec& spec) : spec_(spec) {}
  std::vector<double> p(double x, int z) const override {
    auto q = dgp::true_propensity(spec_, x, z);
    return {q[0], q[1], q[2]};
  }
  double mean(int d, double x, int z) const override {
    return dgp::true_cond_mean(spec_, d, x, z);
  }
  double var(int d, double x, int z) const override {
    return dgp::true_cond_var(spec_, d, x, z);
  }
  double f_dxz(int d, double x, int z) const override {
    auto q = dgp::true_propensity(spec_, x, z);
    double fx = 1.0 / (spec_.x_high - spec_.x_low);
    double pz = z == 1 ? spec_.z_prob : 1.0 - spec_.z_prob;
    return q[static_cast<std::size_t>(d - 1)] * fx * pz;
  }
  int k_d() const override { return 3; }

 private:
  dgp::OrderedChoiceSpec spec_;
};

// One moment equation: conditioning cell (x, z) plus the chain of matching
// pairs that links x back to x0 (empty when x = x0).
struct ConditioningPoint {
  double x = 0.0;
  int z = 0;
  std::vector<dgp::MatchingPair> chain;
};

// The benchmark four-point stack: (x0,0), (x0,1), (xm1,0) via the pair
// (x0,0)~(xm1,1), and (xm2,1) via (x0,1)~(xm2,0). The redundant equations
// at (xm1,1) and (xm2,0) are excluded by construction.
std::vector<ConditioningPoint> benchmark_points(double x0, double xm1,
                                                double xm2);
// Without matching: the two instrument-only equations at x0.
std::vector<ConditioningPoint> no_matching_points(double x0);

// Conditional-mean difference along one link.
double delta_hat(const MomentSource& src, int d, double from_x, int from_z,
                 double to_x, int to_z);
double delta_hat(const kreg::Sample& s, int d, double from_x, int from_z,
                 double to_x, int to_z, double h_m);
// Accumulated shift along a chain.
double delta_chain(const MomentSource& src, int d,
                   const std::vector<dgp::MatchingPair>& chain);

struct LinearSystem {
  num::SmallMatrix pi;   // rows x k_d propensity matrix
  num::SmallMatrix phi;  // rows x 1 adjusted outcome moments
};
LinearSystem build_system(const MomentSource& src, double x0,
                          const std::vector<ConditioningPoint>& points);

struct RankDiagnostic {
  bool full_rank = false;
  double inequality_lhs = 0.0;
  double inequality_rhs = 0.0;
  double condition_number = 0.0;
};
// Full-rank inequality computed from rows (x0,z), (x0,z') and one matching
// row, plus a condition-number check on Pi itself.
RankDiagnostic rank_condition(const num::SmallMatrix& pi);

struct SeparableFit {
  std::vector<double> m_hat;
  num::SmallMatrix cov;           // (Pi' Sigma^{-1} Pi)^{-1} / (n h_m)
  std::vector<double> se;
  double j_sp = 0.0;
  double j_sp_p = 1.0;  // -1 marks "df beyond tabulated chi-square support"
  int j_df = 0;                   // rows - k_d; 0 marks "no test"
  RankDiagnostic rank;
  num::SmallMatrix sigma_sp;      // kappa-scaled moment covariance
  std::vector<ConditioningPoint> points;
  std::size_t n = 0;
  double h_m = 0.0;
  double x0 = 0.0;
};

// Sigma_SP by the shared-cell covariance rule: row r depends on the cell
// means it touches (its own cell plus every chain cell, signed); two rows
// covary through cells they share. Reproduces the printed benchmark matrix.
num::SmallMatrix sigma_sp(const MomentSource& src, double x0,
                          const std::vector<ConditioningPoint>& points);

// Closed-form GMM fit. two_step=false uses the identity weight; true uses
// Sigma_SP^{-1}. Covariance and J are only filled on the two-step path.
SeparableFit fit_separable(const MomentSource& src, double x0,
                           const std::vector<ConditioningPoint>& points,
                           std::size_t n, double h_m, bool two_step = true);
SeparableFit fit_separable(const kreg::Sample& s, double x0,
                           const std::vector<ConditioningPoint>& points,
                           double h_x, double h_m, bool two_step = true,
                           double min_effective_count = 10.0);

struct JResult {
  double stat;
  double p_value;
  int df;
};
JResult jtest_separable(const SeparableFit& fit);

}  // namespace mpt::separable
