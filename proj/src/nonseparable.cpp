#include "mpt/nonseparable.hpp"

#include <algorithm>
#include <cmath>

#include "mpt/separable.hpp"

namespace mpt::nonseparable {

using num::SmallMatrix;

std::vector<double> PsiSource::psi(const std::vector<double>& g) const {
  const int nr = rows();
  std::vector<double> out(static_cast<std::size_t>(nr), 0.0);
  std::array<double, 8> buf{};
  for (int d = 1; d <= k_d(); ++d) {
    level_contrib(d, g[static_cast<std::size_t>(d - 1)], buf.data());
    for (int r = 0; r < nr; ++r) out[static_cast<std::size_t>(r)] += buf[static_cast<std::size_t>(r)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// OraclePsi
// ---------------------------------------------------------------------------

double OraclePsi::CellGrid::operator()(double y) const {
  if (y <= lo) return f.front();
  double t = (y - lo) / step;
  std::size_t i = static_cast<std::size_t>(t);
  if (i + 1 >= f.size()) return f.back();
  double frac = t - static_cast<double>(i);
  return f[i] * (1.0 - frac) + f[i + 1] * frac;
}

OraclePsi::OraclePsi(const dgp::OrderedChoiceSpec& spec, double x0,
                     double y_halfwidth)
    : spec_(spec), x0_(x0) {
  auto mp = dgp::true_matching_points(spec, x0);
  xm1_ = mp.x_m1;
  xm2_ = mp.x_m2;
  p00_ = dgp::true_propensity(spec, x0, 0);
  p01_ = dgp::true_propensity(spec, x0, 1);
  pm1_ = dgp::true_propensity(spec, xm1_, 0);
  pm2_ = dgp::true_propensity(spec, xm2_, 1);
  const struct {
    double x;
    int z;
  } cells[4] = {{x0, 0}, {x0, 1}, {xm1_, 0}, {xm2_, 1}};
  for (int d = 1; d <= 3; ++d) {
    double center = spec.gammas[static_cast<std::size_t>(d - 1)] * (x0 + 1.0);
    bounds_[static_cast<std::size_t>(d - 1)] = {center - y_halfwidth,
                                                center + y_halfwidth};
    shift1_[static_cast<std::size_t>(d - 1)] =
        spec.gammas[static_cast<std::size_t>(d - 1)] * (xm1_ - x0);
    shift2_[static_cast<std::size_t>(d - 1)] =
        spec.gammas[static_cast<std::size_t>(d - 1)] * (xm2_ - x0);
    for (int r = 0; r < 4; ++r) {
      double shift = r == 2 ? shift1_[static_cast<std::size_t>(d - 1)]
                   : r == 3 ? shift2_[static_cast<std::size_t>(d - 1)]
                            : 0.0;
      CellGrid& cg = cells_[static_cast<std::size_t>(d - 1)][static_cast<std::size_t>(r)];
      const int m = 1600;
      cg.lo = bounds_[static_cast<std::size_t>(d - 1)].first + shift - 1.0;
      double hi = bounds_[static_cast<std::size_t>(d - 1)].second + shift + 1.0;
      cg.step = (hi - cg.lo) / m;
      cg.f.resize(m + 1);
      for (int i = 0; i <= m; ++i) {
        cg.f[static_cast<std::size_t>(i)] = dgp::true_cond_cdf(
            spec, cg.lo + cg.step * i, d, cells[r].x, cells[r].z);
      }
    }
  }
}

std::pair<double, double> OraclePsi::y_bounds(int d) const {
  return bounds_[static_cast<std::size_t>(d - 1)];
}

void OraclePsi::level_contrib(int d, double y, double* out_rows) const {
  const std::size_t di = static_cast<std::size_t>(d - 1);
  out_rows[0] = p00_[di] * cells_[di][0](y);
  out_rows[1] = p01_[di] * cells_[di][1](y);
  out_rows[2] = pm1_[di] * cells_[di][2](y + shift1_[di]);
  out_rows[3] = pm2_[di] * cells_[di][3](y + shift2_[di]);
}

// ---------------------------------------------------------------------------
// phi_hat: grid argmin + golden refinement, plateau midpoint.
// ---------------------------------------------------------------------------

namespace {

struct PhiArgmin {
  double y;
  std::size_t hint;
};

// target: squared CDF mismatch at level q against a monotone cell CDF
// evaluated through `cdf`. The value profile over an increasing grid is
// weakly U-shaped, so scanning right from `hint` finds the minimal plateau.
PhiArgmin phi_argmin(const std::function<double(double)>& cdf, double q,
                     double lo, double hi, int grid, std::size_t hint) {
  const std::size_t n = static_cast<std::size_t>(grid);
  const double step = (hi - lo) / static_cast<double>(n - 1);
  auto value = [&](std::size_t i) {
    double f = cdf(lo + step * static_cast<double>(i));
    double dq = f - q;
    return dq * dq;
  };
  std::size_t i = std::min(hint, n - 1);
  double vi = value(i);
  while (i + 1 < n) {
    double vn = value(i + 1);
    if (vn > vi) break;
    vi = vn;
    ++i;
  }
  std::size_t lo_i = i;
  while (lo_i > 0) {
    if (value(lo_i - 1) != vi) break;
    --lo_i;
  }
  if (lo_i < i) {
    // Flat argmin set: midpoint.
    return {0.5 * (lo + step * static_cast<double>(lo_i) + lo +
                   step * static_cast<double>(i)),
            i};
  }
  // Strict grid minimum: golden-section refinement one cell around it.
  double a = lo + step * (i == 0 ? 0.0 : static_cast<double>(i - 1));
  double b = lo + step * static_cast<double>(std::min(i + 1, n - 1));
  auto f = [&](double y) {
    double dq = cdf(y) - q;
    return dq * dq;
  };
  const double inv_phi = 0.6180339887498949;
  double c = b - inv_phi * (b - a), dpt = a + inv_phi * (b - a);
  double fc = f(c), fd = f(dpt);
  for (int it = 0; it < 60 && b - a > 1e-12 * (hi - lo); ++it) {
    if (fc < fd) {
      b = dpt;
      dpt = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = dpt;
      fc = fd;
      dpt = a + inv_phi * (b - a);
      fd = f(dpt);
    }
  }
  return {0.5 * (a + b), i};
}

}  // namespace

double phi_hat(const kreg::Engine& e, double y, int d, double x_from,
               int z_from, double x_to, int z_to, double h_g, double h_0,
               std::pair<double, double> y_bounds, int grid) {
  auto from = e.cell_cdf(d, x_from, z_from, h_g);
  auto to = e.cell_cdf(d, x_to, z_to, h_g);
  double q = from(y, h_0);
  auto res = phi_argmin([&](double t) { return to(t, h_0); }, q,
                        y_bounds.first, y_bounds.second, grid, 0);
  return res.y;
}

// ---------------------------------------------------------------------------
// SamplePsi
// ---------------------------------------------------------------------------

double SamplePsi::PhiTable::operator()(double y) const {
  if (y <= lo) return val.front();
  double t = (y - lo) / step;
  std::size_t i = static_cast<std::size_t>(t);
  if (i + 1 >= val.size()) return val.back();
  double frac = t - static_cast<double>(i);
  return val[i] * (1.0 - frac) + val[i + 1] * frac;
}

SamplePsi::SamplePsi(const kreg::Engine& e, double x0, double xm1, double xm2,
                     double h_x, double h_g, double h_0, const SieveConfig& cfg)
    : e_(&e),
      kd_(e.k_d()),
      x0_(x0),
      xm1_(xm1),
      xm2_(xm2),
      h_x_(h_x),
      h_g_(h_g),
      h_0_(h_0) {
  if (kd_ > 8) throw InvalidArgument("SamplePsi: unsupported |S(D)|");
  auto fill = [&](std::array<double, 8>& dst, double x, int z) {
    auto p = e.propensity(x, z, h_x);
    for (int d = 0; d < kd_; ++d) dst[static_cast<std::size_t>(d)] = p[static_cast<std::size_t>(d)];
  };
  fill(p00_, x0, 0);
  fill(p01_, x0, 1);
  fill(pm1_, xm1, 0);
  fill(pm2_, xm2, 1);

  bounds_.resize(static_cast<std::size_t>(kd_), {1e300, -1e300});
  // S(Y|d) from the full sample.
  for (int d = 1; d <= kd_; ++d) {
    bounds_[static_cast<std::size_t>(d - 1)] = {1e300, -1e300};
  }
  // Engine does not expose raw rows; derive level ranges from cell CDFs of
  // the three conditioning x-points and widen slightly (phi maps clamp).
  cdf_.resize(static_cast<std::size_t>(kd_));
  const double xs[3] = {x0, xm1, xm2};
  for (int d = 1; d <= kd_; ++d) {
    for (int pt = 0; pt < 3; ++pt) {
      for (int z = 0; z < 2; ++z) {
        auto cell = e.cell_cdf(d, xs[pt], z, h_g);
        auto& b = bounds_[static_cast<std::size_t>(d - 1)];
        b.first = std::min(b.first, cell.y_min());
        b.second = std::max(b.second, cell.y_max());
        cdf_[static_cast<std::size_t>(d - 1)][static_cast<std::size_t>(pt)]
            [static_cast<std::size_t>(z)] = std::move(cell);
      }
    }
  }

  // Tabulate the two quantile-matching maps per level with a monotone
  // two-pointer over the shared argmin grid.
  phi1_.resize(static_cast<std::size_t>(kd_));
  phi2_.resize(static_cast<std::size_t>(kd_));
  for (int d = 1; d <= kd_; ++d) {
    const std::size_t di = static_cast<std::size_t>(d - 1);
    const auto& b = bounds_[di];
    for (int which = 0; which < 2; ++which) {
      // Pair (x0,0)~(xm1,1) maps through cell (d, xm1, 1); pair
      // (x0,1)~(xm2,0) through (d, xm2, 0).
      const auto& from = cdf_[di][0][which == 0 ? 0 : 1];
      const auto& to = cdf_[di][which == 0 ? 1 : 2][which == 0 ? 1 : 0];
      PhiTable& tab = which == 0 ? phi1_[di] : phi2_[di];
      const int m = cfg.phi_table;
      tab.lo = b.first;
      tab.step = (b.second - b.first) / static_cast<double>(m - 1);
      tab.val.resize(static_cast<std::size_t>(m));
      std::size_t hint = 0;
      for (int i = 0; i < m; ++i) {
        double y = tab.lo + tab.step * i;
        double q = from(y, h_0_);
        auto res = phi_argmin([&](double t) { return to(t, h_0_); }, q,
                              b.first, b.second, cfg.phi_grid, hint);
        tab.val[static_cast<std::size_t>(i)] = res.y;
        hint = res.hint;
      }
      // The map composes monotone CDFs; enforce weak monotonicity against
      // grid-level wobble so downstream monotone structure is exact.
      for (int i = 1; i < m; ++i) {
        tab.val[static_cast<std::size_t>(i)] =
            std::max(tab.val[static_cast<std::size_t>(i)],
                     tab.val[static_cast<std::size_t>(i - 1)]);
      }
    }
  }
}

std::pair<double, double> SamplePsi::y_bounds(int d) const {
  return bounds_[static_cast<std::size_t>(d - 1)];
}

double SamplePsi::phi1(int d, double y) const {
  return phi1_[static_cast<std::size_t>(d - 1)](y);
}

double SamplePsi::phi2(int d, double y) const {
  return phi2_[static_cast<std::size_t>(d - 1)](y);
}

double SamplePsi::cell_cdf(int d, double x, int z, double y) const {
  int pt = x == x0_ ? 0 : x == xm1_ ? 1 : 2;
  return cdf_[static_cast<std::size_t>(d - 1)][static_cast<std::size_t>(pt)]
             [static_cast<std::size_t>(z)](y, h_0_);
}

void SamplePsi::level_contrib(int d, double y, double* out_rows) const {
  const std::size_t di = static_cast<std::size_t>(d - 1);
  out_rows[0] = p00_[di] * cdf_[di][0][0](y, h_0_);
  out_rows[1] = p01_[di] * cdf_[di][0][1](y, h_0_);
  out_rows[2] = pm1_[di] * cdf_[di][1][0](phi1_[di](y), h_0_);
  out_rows[3] = pm2_[di] * cdf_[di][2][1](phi2_[di](y), h_0_);
}

std::vector<double> SamplePsi::quantile_init(double u) const {
  // u-quantiles of Y within |X - x0| <= h_g per level, both z pooled: read
  // off the x0-cell CDFs by inversion (weighted mixture of the two z-cells).
  std::vector<double> g(static_cast<std::size_t>(kd_));
  for (int d = 1; d <= kd_; ++d) {
    const std::size_t di = static_cast<std::size_t>(d - 1);
    auto mix = [&](double y) {
      return 0.5 * (cdf_[di][0][0](y, h_0_) + cdf_[di][0][1](y, h_0_));
    };
    double lo = bounds_[di].first, hi = bounds_[di].second;
    for (int it = 0; it < 60; ++it) {
      double mid = 0.5 * (lo + hi);
      (mix(mid) < u ? lo : hi) = mid;
    }
    g[di] = 0.5 * (lo + hi);
  }
  return g;
}

std::vector<double> psi_hat(const kreg::Engine& e, const std::vector<double>& g,
                            double x0, double xm1, double xm2, double h_x,
                            double h_g, double h_0, const SieveConfig& cfg) {
  SamplePsi src(e, x0, xm1, xm2, h_x, h_g, h_0, cfg);
  return src.psi(g);
}

// ---------------------------------------------------------------------------
// Sieve solver
// ---------------------------------------------------------------------------

namespace {

struct Workspace {
  int J, kd, rows;
  const PsiSource* src;
  const std::vector<SmallMatrix>* w;  // may be null -> identity
  double lambda;
  std::vector<double> u;
  std::vector<std::vector<double>> G;               // [j][d]
  std::vector<std::vector<std::array<double, 8>>> C;  // [j][d][row]
  std::vector<std::array<double, 8>> P;             // [j][row]
  std::vector<double> Q;                            // [j]
  std::vector<std::pair<double, double>> bounds;

  double quad(int j, const double* resid) const {
    if (w == nullptr || (*w).empty()) {
      double s = 0.0;
      for (int r = 0; r < rows; ++r) s += resid[r] * resid[r];
      return s;
    }
    const SmallMatrix& m = (*w)[static_cast<std::size_t>(j)];
    double s = 0.0;
    for (int r = 0; r < rows; ++r) {
      double row = 0.0;
      for (int c = 0; c < rows; ++c) row += m(r, c) * resid[c];
      s += resid[r] * row;
    }
    return s;
  }

  double node_q(int j) const {
    double resid[8];
    for (int r = 0; r < rows; ++r) {
      resid[r] = P[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] -
                 u[static_cast<std::size_t>(j)];
    }
    return quad(j, resid);
  }

  void rebuild(const std::vector<std::vector<double>>& g0) {
    G = g0;
    for (int j = 0; j < J; ++j) {
      for (int r = 0; r < rows; ++r) P[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] = 0.0;
      for (int d = 1; d <= kd; ++d) {
        auto& c = C[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)];
        src->level_contrib(d, G[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)], c.data());
        for (int r = 0; r < rows; ++r) P[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] += c[static_cast<std::size_t>(r)];
      }
      Q[static_cast<std::size_t>(j)] = node_q(j);
    }
  }

  double objective() const {
    double s = 0.0;
    for (int j = 0; j < J; ++j) s += Q[static_cast<std::size_t>(j)];
    s /= static_cast<double>(J);
    if (lambda > 0.0) {
      for (int j = 1; j < J; ++j) {
        for (int d = 0; d < kd; ++d) {
          double diff = G[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)] -
                        G[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(d)];
          s += lambda * diff * diff;
        }
      }
    }
    return s;
  }

  // Objective change from shifting level d at nodes j0..J-1 by delta.
  double eval_shift(int d, int j0, double delta) const {
    double total = 0.0;
    double buf[8];
    double resid[8];
    for (int j = j0; j < J; ++j) {
      src->level_contrib(d, G[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)] + delta,
                         buf);
      const auto& cj = C[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)];
      for (int r = 0; r < rows; ++r) {
        resid[r] = P[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] -
                   cj[static_cast<std::size_t>(r)] + buf[r] - u[static_cast<std::size_t>(j)];
      }
      total += quad(j, resid) - Q[static_cast<std::size_t>(j)];
    }
    total /= static_cast<double>(J);
    if (lambda > 0.0 && j0 >= 1) {
      double d0 = G[static_cast<std::size_t>(j0)][static_cast<std::size_t>(d - 1)] -
                  G[static_cast<std::size_t>(j0 - 1)][static_cast<std::size_t>(d - 1)];
      total += lambda * ((d0 + delta) * (d0 + delta) - d0 * d0);
    }
    return total;
  }

  // Objective change from moving the single node (j, d) to ynew.
  double eval_node(int d, int j, double ynew) const {
    double buf[8];
    double resid[8];
    src->level_contrib(d, ynew, buf);
    const auto& cj = C[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)];
    for (int r = 0; r < rows; ++r) {
      resid[r] = P[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] -
                 cj[static_cast<std::size_t>(r)] + buf[r] - u[static_cast<std::size_t>(j)];
    }
    double total = (quad(j, resid) - Q[static_cast<std::size_t>(j)]) /
                   static_cast<double>(J);
    if (lambda > 0.0) {
      double old = G[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)];
      if (j > 0) {
        double gp = G[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(d - 1)];
        total += lambda * ((ynew - gp) * (ynew - gp) - (old - gp) * (old - gp));
      }
      if (j + 1 < J) {
        double gn = G[static_cast<std::size_t>(j + 1)][static_cast<std::size_t>(d - 1)];
        total += lambda * ((gn - ynew) * (gn - ynew) - (gn - old) * (gn - old));
      }
    }
    return total;
  }

  void commit_node(int d, int j, double ynew) {
    auto& gj = G[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)];
    if (ynew == gj) return;
    gj = ynew;
    auto& c = C[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)];
    double old[8];
    for (int r = 0; r < rows; ++r) old[r] = c[static_cast<std::size_t>(r)];
    src->level_contrib(d, gj, c.data());
    for (int r = 0; r < rows; ++r) {
      P[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] += c[static_cast<std::size_t>(r)] - old[r];
    }
    Q[static_cast<std::size_t>(j)] = node_q(j);
  }

  void commit(int d, int j0, double delta) {
    if (delta == 0.0) return;
    for (int j = j0; j < J; ++j) {
      auto& gj = G[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)];
      gj += delta;
    }
    // Exact feasibility: clamp against bounds and the previous node.
    const auto& b = bounds[static_cast<std::size_t>(d - 1)];
    for (int j = j0; j < J; ++j) {
      auto& gj = G[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)];
      gj = std::min(std::max(gj, b.first), b.second);
      if (j > 0) {
        gj = std::max(gj, G[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(d - 1)]);
      }
    }
    for (int j = j0; j < J; ++j) {
      auto& c = C[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)];
      double old[8];
      for (int r = 0; r < rows; ++r) old[r] = c[static_cast<std::size_t>(r)];
      src->level_contrib(d, G[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)], c.data());
      for (int r = 0; r < rows; ++r) {
        P[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] += c[static_cast<std::size_t>(r)] - old[r];
      }
      Q[static_cast<std::size_t>(j)] = node_q(j);
    }
  }
};

// Scalar line search: coarse bracketing grid (the objective saturates and
// is not unimodal along tail shifts), then golden-section inside the best
// bracket. Returns 0 when no move beats the current point.
double grid_golden_shift(const Workspace& ws, int d, int j0, double lo,
                         double hi, int grid, int golden) {
  if (!(hi > lo)) return 0.0;
  double best_v = 0.0, best_x = 0.0;  // delta = 0 is the standing point
  double step = (hi - lo) / grid;
  for (int i = 0; i <= grid; ++i) {
    double x = lo + step * i;
    double v = ws.eval_shift(d, j0, x);
    if (v < best_v) {
      best_v = v;
      best_x = x;
    }
  }
  double a = std::max(lo, best_x - step);
  double b = std::min(hi, best_x + step);
  const double inv_phi = 0.6180339887498949;
  double c = b - inv_phi * (b - a), dd = a + inv_phi * (b - a);
  double fc = ws.eval_shift(d, j0, c), fd = ws.eval_shift(d, j0, dd);
  for (int it = 0; it < golden; ++it) {
    if (fc < fd) {
      b = dd;
      dd = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = ws.eval_shift(d, j0, c);
    } else {
      a = c;
      c = dd;
      fc = fd;
      dd = a + inv_phi * (b - a);
      fd = ws.eval_shift(d, j0, dd);
    }
  }
  double refined = 0.5 * (a + b);
  if (ws.eval_shift(d, j0, refined) < best_v) return refined;
  if (best_v < 0.0) return best_x;
  return 0.0;
}

}  // namespace

SieveSolution solve_sieve(const PsiSource& src, const SieveConfig& cfg,
                          const std::vector<SmallMatrix>& w_nodes,
                          const std::vector<std::vector<std::vector<double>>>& inits) {
  const int J = cfg.j_nodes;
  const int kd = src.k_d();
  if (J < 3) throw InvalidArgument("solve_sieve: J >= 3 required");
  if (!w_nodes.empty() && static_cast<int>(w_nodes.size()) != J) {
    throw InvalidArgument("solve_sieve: one weighting matrix per node required");
  }
  if (inits.empty()) throw InvalidArgument("solve_sieve: at least one start required");

  Workspace ws;
  ws.J = J;
  ws.kd = kd;
  ws.rows = src.rows();
  ws.src = &src;
  ws.w = w_nodes.empty() ? nullptr : &w_nodes;
  ws.lambda = cfg.lambda;
  ws.u.resize(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    ws.u[static_cast<std::size_t>(j)] = static_cast<double>(j + 1) / static_cast<double>(J);
  }
  ws.C.assign(static_cast<std::size_t>(J),
              std::vector<std::array<double, 8>>(static_cast<std::size_t>(kd)));
  ws.P.assign(static_cast<std::size_t>(J), {});
  ws.Q.assign(static_cast<std::size_t>(J), 0.0);
  ws.bounds.resize(static_cast<std::size_t>(kd));
  for (int d = 1; d <= kd; ++d) ws.bounds[static_cast<std::size_t>(d - 1)] = src.y_bounds(d);

  SieveSolution best;
  best.objective = 1e300;

  for (const auto& init : inits) {
    // Sanitize the start: clamp into bounds and monotonize.
    std::vector<std::vector<double>> g0 = init;
    for (int d = 0; d < kd; ++d) {
      const auto& b = ws.bounds[static_cast<std::size_t>(d)];
      double prev = b.first;
      for (int j = 0; j < J; ++j) {
        auto& v = g0[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)];
        v = std::min(std::max(v, prev), b.second);
        prev = v;
      }
    }
    ws.rebuild(g0);
    double obj = ws.objective();
    // Relative stopping threshold: scale-free, so rescaling every node
    // weight by a constant reproduces the identical solver path.
    const double stop_tol = cfg.objective_tol * obj;
    int sweep = 0;
    bool converged = false;
    for (; sweep < cfg.max_sweeps; ++sweep) {
      const bool tail_pass =
          sweep < 4 || cfg.increment_pass_every <= 1 ||
          sweep % cfg.increment_pass_every == 0;
      for (int d = 1; d <= kd; ++d) {
        const auto& b = ws.bounds[static_cast<std::size_t>(d - 1)];
        if (tail_pass) {
          double head = b.second -
                        ws.G[static_cast<std::size_t>(J - 1)][static_cast<std::size_t>(d - 1)];
          // First node: shift the whole level curve.
          double lo = b.first - ws.G[0][static_cast<std::size_t>(d - 1)];
          ws.commit(d, 0,
                    grid_golden_shift(ws, d, 0, lo, head, cfg.ls_grid, cfg.ls_golden));
          // Increments: expand or shrink the tail from node j on.
          for (int j = 1; j < J; ++j) {
            head = b.second -
                   ws.G[static_cast<std::size_t>(J - 1)][static_cast<std::size_t>(d - 1)];
            double t = ws.G[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)] -
                       ws.G[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(d - 1)];
            ws.commit(d, j,
                      grid_golden_shift(ws, d, j, -t, head, cfg.ls_grid, cfg.ls_golden));
          }
        }
        // Box polish: each node inside its feasibility interval.
        for (int j = 0; j < J; ++j) {
          double blo = j > 0 ? ws.G[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(d - 1)]
                             : b.first;
          double bhi = j + 1 < J
                           ? ws.G[static_cast<std::size_t>(j + 1)][static_cast<std::size_t>(d - 1)]
                           : b.second;
          if (!(bhi > blo)) continue;
          double cur = ws.G[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)];
          const int grid = cfg.ls_grid;
          double best_v = 0.0, best_y = cur;
          for (int i = 0; i <= grid; ++i) {
            double y = blo + (bhi - blo) * i / grid;
            double v = ws.eval_node(d, j, y);
            if (v < best_v) {
              best_v = v;
              best_y = y;
            }
          }
          double a = std::max(blo, best_y - (bhi - blo) / grid);
          double bb = std::min(bhi, best_y + (bhi - blo) / grid);
          const double inv_phi = 0.6180339887498949;
          double c = bb - inv_phi * (bb - a), dd = a + inv_phi * (bb - a);
          double fc = ws.eval_node(d, j, c), fd = ws.eval_node(d, j, dd);
          for (int it = 0; it < cfg.ls_golden; ++it) {
            if (fc < fd) {
              bb = dd;
              dd = c;
              fd = fc;
              c = bb - inv_phi * (bb - a);
              fc = ws.eval_node(d, j, c);
            } else {
              a = c;
              c = dd;
              fc = fd;
              dd = a + inv_phi * (bb - a);
              fd = ws.eval_node(d, j, dd);
            }
          }
          double refined = 0.5 * (a + bb);
          if (ws.eval_node(d, j, refined) < best_v) {
            ws.commit_node(d, j, refined);
          } else if (best_v < 0.0) {
            ws.commit_node(d, j, best_y);
          }
        }
      }
      double now = ws.objective();
      if (obj - now <= stop_tol && tail_pass) {
        // Only declare convergence on a sweep where the tail-shift pass ran.
        obj = now;
        converged = true;
        ++sweep;
        break;
      }
      obj = now;
    }
    if (obj < best.objective) {
      best.objective = obj;
      best.g = ws.G;
      best.sweeps = sweep;
      best.converged = converged;
    }
  }
  best.u_nodes = ws.u;
  return best;
}

// ---------------------------------------------------------------------------
// Sigma_NSP and the two-step fit
// ---------------------------------------------------------------------------

namespace {

double fd_density(const SamplePsi& psi, int d, double x, int z, double y) {
  double h0 = psi.h_0();
  double f = (psi.cell_cdf(d, x, z, y + h0) - psi.cell_cdf(d, x, z, y - h0)) /
             (2.0 * h0);
  return std::max(f, 1e-8);
}

}  // namespace

SmallMatrix sigma_nsp(const SamplePsi& psi, const std::vector<double>& g) {
  if (psi.k_d() != 3) {
    throw InvalidArgument("sigma_nsp: printed pattern covers |S(D)| = 3");
  }
  const kreg::Engine& e = psi.engine();
  const double x0 = psi.x0(), xm1 = psi.xm1(), xm2 = psi.xm2();
  struct Cell {
    double x;
    int z;
  };
  const Cell zt[6] = {{x0, 0}, {xm1, 0}, {xm1, 1}, {x0, 1}, {xm2, 1}, {xm2, 0}};
  std::array<std::vector<double>, 6> pz;
  for (int k = 0; k < 6; ++k) {
    pz[static_cast<std::size_t>(k)] =
        e.propensity(zt[k].x, zt[k].z, psi.h_x());
  }
  SmallMatrix sig(4, 4);
  for (int d = 1; d <= 3; ++d) {
    const std::size_t di = static_cast<std::size_t>(d - 1);
    double yd = g[di];
    double ym1 = psi.phi1(d, yd);
    double ym2 = psi.phi2(d, yd);
    auto vdelta = [&](int k) {
      double y = k == 0 || k == 3 ? yd : (k == 1 || k == 2 ? ym1 : ym2);
      double f = psi.cell_cdf(d, zt[k].x, zt[k].z, y);
      return f * (1.0 - f);
    };
    auto fden = [&](int k) {
      return std::max(e.f_dxz(d, zt[k].x, zt[k].z, psi.h_g()), 1e-10);
    };
    double phi_d1 = fd_density(psi, d, xm1, 0, ym1) / fd_density(psi, d, xm1, 1, ym1);
    double phi_d2 = fd_density(psi, d, xm2, 1, ym2) / fd_density(psi, d, xm2, 0, ym2);
    auto p_at = [&](int k) { return pz[static_cast<std::size_t>(k)][di]; };

    sig(0, 0) += p_at(0) * p_at(0) * vdelta(0) / fden(0);
    sig(1, 1) += p_at(3) * p_at(3) * vdelta(3) / fden(3);
    double c02 = phi_d1 * p_at(0) * p_at(1) * vdelta(0) / fden(0);
    sig(0, 2) += c02;
    sig(2, 0) += c02;
    double c13 = phi_d2 * p_at(3) * p_at(4) * vdelta(3) / fden(3);
    sig(1, 3) += c13;
    sig(3, 1) += c13;
    for (int k = 0; k < 3; ++k) {
      sig(2, 2) += phi_d1 * phi_d1 * p_at(1) * p_at(1) * vdelta(k) / fden(k);
    }
    for (int k = 3; k < 6; ++k) {
      sig(3, 3) += phi_d2 * phi_d2 * p_at(4) * p_at(4) * vdelta(k) / fden(k);
    }
  }
  return sig.scaled(kern::kKappa);
}

NonseparableFit fit_nonseparable(const kreg::Engine& e, const kreg::Sample& s,
                                 double x0, double xm1, double xm2, double h_x,
                                 const SieveConfig& cfg, double h_g, double h_0) {
  SamplePsi psi(e, x0, xm1, xm2, h_x, h_g, h_0, cfg);
  const int J = cfg.j_nodes;
  const int kd = psi.k_d();

  // Deterministic starts.
  std::vector<std::vector<std::vector<double>>> inits;
  {
    std::vector<std::vector<double>> lin(static_cast<std::size_t>(J),
                                         std::vector<double>(static_cast<std::size_t>(kd)));
    for (int d = 1; d <= kd; ++d) {
      auto b = psi.y_bounds(d);
      for (int j = 0; j < J; ++j) {
        lin[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)] =
            b.first + (b.second - b.first) * static_cast<double>(j) /
                          static_cast<double>(J - 1);
      }
    }
    inits.push_back(std::move(lin));
  }
  {
    std::vector<std::vector<double>> quant(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j) {
      quant[static_cast<std::size_t>(j)] =
          psi.quantile_init(static_cast<double>(j + 1) / static_cast<double>(J + 1));
    }
    inits.push_back(std::move(quant));
  }
  // Separable-fit-shifted normal quantiles; falls back to the empirical
  // start when the closed-form fit is not estimable on this sample.
  try {
    auto pts = separable::benchmark_points(x0, xm1, xm2);
    auto sep = separable::fit_separable(s, x0, pts, h_x, h_g, false,
                                        e.min_effective_count());
    std::vector<std::vector<double>> norm(static_cast<std::size_t>(J),
                                          std::vector<double>(static_cast<std::size_t>(kd)));
    for (int d = 1; d <= kd; ++d) {
      double sd = std::sqrt(0.5 * (e.cond_var(d, x0, 0, h_g) +
                                   e.cond_var(d, x0, 1, h_g)));
      for (int j = 0; j < J; ++j) {
        double uj = (static_cast<double>(j) + 0.5) / static_cast<double>(J);
        norm[static_cast<std::size_t>(j)][static_cast<std::size_t>(d - 1)] =
            sep.m_hat[static_cast<std::size_t>(d - 1)] +
            sd * num::std_normal_quantile(uj);
      }
    }
    inits.push_back(std::move(norm));
  } catch (const Error&) {
  }

  // Step 1: identity weights.
  SieveSolution sol1 = solve_sieve(psi, cfg, {}, inits);
  SieveSolution sol2 = sol1;

  if (cfg.optimal_weights) {
    // Step 2: optimal weights on U0, identity elsewhere.
    std::vector<SmallMatrix> w(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j) {
      double uj = static_cast<double>(j + 1) / static_cast<double>(J);
      SmallMatrix wj = SmallMatrix::identity(4);
      if (uj >= cfg.u0_lo && uj <= cfg.u0_hi) {
        try {
          wj = num::inverse_psd(sigma_nsp(psi, sol1.g[static_cast<std::size_t>(j)]));
        } catch (const SingularMatrix&) {
          // weak cell: keep the identity weight at this node
        }
      }
      w[static_cast<std::size_t>(j)] = wj;
    }
    inits.push_back(sol1.g);
    sol2 = solve_sieve(psi, cfg, w, inits);
  }

  NonseparableFit fit;
  fit.u_nodes = sol2.u_nodes;
  fit.g_hat = sol2.g;
  fit.objective = sol2.objective;
  fit.sweeps = sol2.sweeps;
  fit.converged = sol2.converged;
  fit.x0 = x0;
  fit.xm1 = xm1;
  fit.xm2 = xm2;
  fit.h_g = h_g;
  fit.h_0 = h_0;
  fit.n = s.n();
  fit.optimal_weights = cfg.optimal_weights;
  return fit;
}

std::vector<double> eval_curve(const NonseparableFit& fit, double u) {
  const std::size_t J = fit.u_nodes.size();
  const std::size_t kd = fit.g_hat.front().size();
  std::vector<double> g(kd);
  if (u <= fit.u_nodes.front()) return fit.g_hat.front();
  if (u >= fit.u_nodes.back()) return fit.g_hat.back();
  std::size_t j = 1;
  while (j < J && fit.u_nodes[j] < u) ++j;
  double t = (u - fit.u_nodes[j - 1]) / (fit.u_nodes[j] - fit.u_nodes[j - 1]);
  for (std::size_t d = 0; d < kd; ++d) {
    g[d] = fit.g_hat[j - 1][d] * (1.0 - t) + fit.g_hat[j][d] * t;
  }
  return g;
}

void pointwise_inference(NonseparableFit& fit, const SamplePsi& psi,
                         const SieveConfig& cfg, double u0) {
  const int J = static_cast<int>(fit.u_nodes.size());
  int j0 = -1;
  for (int j = 0; j < J; ++j) {
    if (std::abs(fit.u_nodes[static_cast<std::size_t>(j)] - u0) < 1e-9) j0 = j;
  }
  if (j0 < 0 || u0 < cfg.u0_lo - 1e-12 || u0 > cfg.u0_hi + 1e-12) {
    throw InvalidArgument("pointwise_inference: u0 must be a node inside U0");
  }
  const std::vector<double>& g = fit.g_hat[static_cast<std::size_t>(j0)];
  const int kd = psi.k_d();

  // Active adjacent constraints at u0 are reported, not silently trusted.
  fit.constraint_active_at_u0 = false;
  for (int d = 0; d < kd; ++d) {
    auto b = psi.y_bounds(d + 1);
    double tol = 1e-9 * (b.second - b.first);
    if (j0 > 0 &&
        g[static_cast<std::size_t>(d)] -
                fit.g_hat[static_cast<std::size_t>(j0 - 1)][static_cast<std::size_t>(d)] <
            tol) {
      fit.constraint_active_at_u0 = true;
    }
    if (j0 + 1 < J &&
        fit.g_hat[static_cast<std::size_t>(j0 + 1)][static_cast<std::size_t>(d)] -
                g[static_cast<std::size_t>(d)] <
            tol) {
      fit.constraint_active_at_u0 = true;
    }
  }

  SmallMatrix sigma = sigma_nsp(psi, g);
  SmallMatrix sig_inv;
  try {
    sig_inv = num::inverse_psd(sigma);
  } catch (const SingularMatrix&) {
    throw WeakIdentification("pointwise_inference: Sigma_NSP singular");
  }

  // Jacobian of Psi at g by central differences. The step is range/200
  // floored at twice the CDF smoothing bandwidth: differencing an
  // h_0-smoothed curve below its smoothness scale returns local noise
  // rather than the slope.
  SmallMatrix jac(4, kd);
  for (int d = 0; d < kd; ++d) {
    auto b = psi.y_bounds(d + 1);
    double step = std::max((b.second - b.first) / 200.0, 2.0 * psi.h_0());
    std::vector<double> gp = g, gm = g;
    gp[static_cast<std::size_t>(d)] += step;
    gm[static_cast<std::size_t>(d)] -= step;
    auto up = psi.psi(gp);
    auto dn = psi.psi(gm);
    for (int r = 0; r < 4; ++r) {
      jac(r, d) = (up[static_cast<std::size_t>(r)] - dn[static_cast<std::size_t>(r)]) /
                  (2.0 * step);
    }
  }

  // GMM sandwich at the weight the curve was fitted with; collapses to
  // [Pi' Sigma^{-1} Pi]^{-1} under the optimal weights.
  const double nh = static_cast<double>(fit.n) * fit.h_g;
  try {
    if (fit.optimal_weights) {
      SmallMatrix info = jac.transpose() * sig_inv * jac;
      fit.cov_u0 = num::inverse_psd(info).scaled(1.0 / nh);
    } else {
      SmallMatrix jtj = jac.transpose() * jac;
      SmallMatrix bread = num::inverse_psd(jtj);
      SmallMatrix meat = jac.transpose() * sigma * jac;
      fit.cov_u0 = (bread * meat * bread).scaled(1.0 / nh);
    }
  } catch (const SingularMatrix&) {
    throw WeakIdentification("pointwise_inference: Jacobian rank deficient");
  }
  fit.u0 = u0;
  fit.g_u0 = g;
  fit.se_u0.resize(static_cast<std::size_t>(kd));
  for (int d = 0; d < kd; ++d) {
    fit.se_u0[static_cast<std::size_t>(d)] = std::sqrt(fit.cov_u0(d, d));
  }

  auto p = psi.psi(g);
  double resid[8];
  for (int r = 0; r < 4; ++r) resid[r] = p[static_cast<std::size_t>(r)] - u0;
  double q = 0.0;
  for (int r = 0; r < 4; ++r) {
    double row = 0.0;
    for (int c = 0; c < 4; ++c) row += sig_inv(r, c) * resid[c];
    q += resid[r] * row;
  }
  fit.j_nsp = nh * q;
  fit.j_nsp_p = num::chi_square_sf(fit.j_nsp, 1);
}

}  // namespace mpt::nonseparable
