#include "mpt/separable.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

namespace mpt::separable {

using num::SmallMatrix;

std::vector<ConditioningPoint> benchmark_points(double x0, double xm1,
                                                double xm2) {
  std::vector<ConditioningPoint> pts(4);
  pts[0] = {x0, 0, {}};
  pts[1] = {x0, 1, {}};
  pts[2] = {xm1, 0, {{x0, 0, xm1, 1}}};
  pts[3] = {xm2, 1, {{x0, 1, xm2, 0}}};
  return pts;
}

std::vector<ConditioningPoint> no_matching_points(double x0) {
  return {{x0, 0, {}}, {x0, 1, {}}};
}

double delta_hat(const MomentSource& src, int d, double from_x, int from_z,
                 double to_x, int to_z) {
  return src.mean(d, to_x, to_z) - src.mean(d, from_x, from_z);
}

double delta_hat(const kreg::Sample& s, int d, double from_x, int from_z,
                 double to_x, int to_z, double h_m) {
  kreg::Engine e(s);
  SampleMoments src(e, h_m, h_m);
  return delta_hat(src, d, from_x, from_z, to_x, to_z);
}

double delta_chain(const MomentSource& src, int d,
                   const std::vector<dgp::MatchingPair>& chain) {
  double total = 0.0;
  for (const auto& link : chain) {
    total += delta_hat(src, d, link.from_x, link.from_z, link.to_x, link.to_z);
  }
  return total;
}

LinearSystem build_system(const MomentSource& src, double x0,
                          const std::vector<ConditioningPoint>& points) {
  (void)x0;
  const int kd = src.k_d();
  const int rows = static_cast<int>(points.size());
  if (rows < kd) {
    throw InvalidArgument("build_system: fewer equations than unknowns");
  }
  LinearSystem sys{SmallMatrix(rows, kd), SmallMatrix(rows, 1)};
  for (int r = 0; r < rows; ++r) {
    const ConditioningPoint& pt = points[static_cast<std::size_t>(r)];
    std::vector<double> pr = src.p(pt.x, pt.z);
    double phi = 0.0;
    for (int d = 1; d <= kd; ++d) {
      double drift = delta_chain(src, d, pt.chain);
      double adj = src.mean(d, pt.x, pt.z) - drift;
      sys.pi(r, d - 1) = pr[static_cast<std::size_t>(d - 1)];
      phi += adj * pr[static_cast<std::size_t>(d - 1)];
    }
    sys.phi(r, 0) = phi;
  }
  return sys;
}

RankDiagnostic rank_condition(const num::SmallMatrix& pi) {
  RankDiagnostic diag;
  diag.condition_number = num::condition_number(pi);
  if (pi.rows() >= 3 && pi.cols() >= 3) {
    // Rows 1, 2 are (x0, z), (x0, z'); row 3 is a matching row at z. The
    // inequality compares cross products of first/last propensity shifts.
    const int last = pi.cols() - 1;
    double lhs = (pi(2, 0) - pi(0, 0)) * (pi(0, last) - pi(1, last));
    double rhs = (pi(0, 0) - pi(1, 0)) * (pi(2, last) - pi(0, last));
    diag.inequality_lhs = lhs;
    diag.inequality_rhs = rhs;
    diag.full_rank =
        std::abs(lhs - rhs) >= 1e-6 && diag.condition_number <= 1e8;
  } else {
    // Square 2x2 instrument-only systems: condition number alone.
    diag.full_rank = diag.condition_number <= 1e8;
  }
  return diag;
}

namespace {

struct CellKey {
  long long x_bits;
  int z;
  bool operator<(const CellKey& o) const {
    if (x_bits != o.x_bits) return x_bits < o.x_bits;
    return z < o.z;
  }
};

CellKey key_of(double x, int z) {
  long long bits;
  static_assert(sizeof(bits) == sizeof(x));
  std::memcpy(&bits, &x, sizeof(bits));
  return {bits, z};
}

}  // namespace

SmallMatrix sigma_sp(const MomentSource& src, double x0,
                     const std::vector<ConditioningPoint>& points) {
  (void)x0;
  const int kd = src.k_d();
  const int rows = static_cast<int>(points.size());
  SmallMatrix sig(rows, rows);

  for (int d = 1; d <= kd; ++d) {
    // Signed coefficient of each cell mean inside each row, all scaled by
    // the row's own propensity weight p_d(point).
    std::vector<std::map<CellKey, double>> coef(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      const ConditioningPoint& pt = points[static_cast<std::size_t>(r)];
      double w = src.p(pt.x, pt.z)[static_cast<std::size_t>(d - 1)];
      auto& row = coef[static_cast<std::size_t>(r)];
      row[key_of(pt.x, pt.z)] += w;
      for (const auto& link : pt.chain) {
        row[key_of(link.from_x, link.from_z)] += w;  // -delta adds the origin cell
        row[key_of(link.to_x, link.to_z)] -= w;
      }
    }
    // Shared-cell covariance: each cell mean contributes V / f at its cell.
    for (int r = 0; r < rows; ++r) {
      for (int s = r; s < rows; ++s) {
        double acc = 0.0;
        for (const auto& [cell, cr] : coef[static_cast<std::size_t>(r)]) {
          auto it = coef[static_cast<std::size_t>(s)].find(cell);
          if (it == coef[static_cast<std::size_t>(s)].end()) continue;
          double x;
          std::memcpy(&x, &cell.x_bits, sizeof(x));
          double v = src.var(d, x, cell.z);
          double f = src.f_dxz(d, x, cell.z);
          acc += cr * it->second * v / f;
        }
        sig(r, s) += acc;
        if (s != r) sig(s, r) += acc;
      }
    }
  }
  return sig.scaled(kern::kKappa);
}

SeparableFit fit_separable(const MomentSource& src, double x0,
                           const std::vector<ConditioningPoint>& points,
                           std::size_t n, double h_m, bool two_step) {
  const int kd = src.k_d();
  const int rows = static_cast<int>(points.size());
  LinearSystem sys = build_system(src, x0, points);

  SeparableFit fit;
  fit.points = points;
  fit.n = n;
  fit.h_m = h_m;
  fit.x0 = x0;
  fit.rank = rank_condition(sys.pi);
  fit.j_df = rows - kd;

  SmallMatrix w = SmallMatrix::identity(rows);
  if (two_step) {
    fit.sigma_sp = sigma_sp(src, x0, points);
    try {
      w = num::inverse_psd(fit.sigma_sp);
    } catch (const SingularMatrix&) {
      throw WeakIdentification("fit_separable: Sigma_SP singular");
    }
  }

  SmallMatrix pit_w = sys.pi.transpose() * w;
  SmallMatrix gram = pit_w * sys.pi;
  SmallMatrix rhs = pit_w * sys.phi;
  SmallMatrix sol;
  try {
    sol = num::solve_psd(gram, rhs);
  } catch (const SingularMatrix&) {
    throw WeakIdentification("fit_separable: rank condition failed");
  }
  fit.m_hat.resize(static_cast<std::size_t>(kd));
  for (int d = 0; d < kd; ++d) fit.m_hat[static_cast<std::size_t>(d)] = sol(d, 0);

  if (two_step) {
    try {
      fit.cov = num::inverse_psd(gram).scaled(
          1.0 / (static_cast<double>(n) * h_m));
    } catch (const SingularMatrix&) {
      throw WeakIdentification("fit_separable: singular information matrix");
    }
    fit.se.resize(static_cast<std::size_t>(kd));
    for (int d = 0; d < kd; ++d) {
      fit.se[static_cast<std::size_t>(d)] = std::sqrt(fit.cov(d, d));
    }
    if (fit.j_df >= 1) {
      SmallMatrix resid = sys.pi * sol - sys.phi;
      SmallMatrix q = resid.transpose() * w * resid;
      fit.j_sp = static_cast<double>(n) * h_m * q(0, 0);
      // Reference p-values only cover the 1 and 2 dof cases; larger
      // general-chain systems report the statistic with p marked absent.
      fit.j_sp_p = fit.j_df <= 2 ? num::chi_square_sf(fit.j_sp, fit.j_df) : -1.0;
    }
  }
  return fit;
}

SeparableFit fit_separable(const kreg::Sample& s, double x0,
                           const std::vector<ConditioningPoint>& points,
                           double h_x, double h_m, bool two_step,
                           double min_effective_count) {
  kreg::Engine e(s, min_effective_count);
  SampleMoments src(e, h_x, h_m);
  return fit_separable(src, x0, points, s.n(), h_m, two_step);
}

JResult jtest_separable(const SeparableFit& fit) {
  if (fit.j_df < 1) {
    throw InvalidArgument("jtest_separable: system is just-identified");
  }
  return {fit.j_sp, fit.j_sp_p, fit.j_df};
}

}  // namespace mpt::separable
