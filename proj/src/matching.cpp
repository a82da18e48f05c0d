#include "mpt/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mpt::matching {

using num::SmallMatrix;

double slack_a_n(std::size_t n, double h_x, double multiplier) {
  double nn = static_cast<double>(n);
  double c_n = std::sqrt(std::log(nn) / (nn * h_x)) + h_x * h_x;
  return multiplier * std::sqrt(std::log(nn)) * c_n;
}

std::vector<double> delta_p(const PropensitySource& src, double x0, double x1,
                            double x2) {
  const int kd = src.k_d();
  std::vector<double> p00 = src.p(x0, 0);
  std::vector<double> p01 = src.p(x0, 1);
  std::vector<double> a = src.p(x1, 1);
  std::vector<double> b = src.p(x2, 0);
  std::vector<double> dp;
  dp.reserve(static_cast<std::size_t>(2 * (kd - 1)));
  for (int d = 0; d < kd - 1; ++d) dp.push_back(a[d] - p00[d]);
  for (int d = 0; d < kd - 1; ++d) dp.push_back(b[d] - p01[d]);
  return dp;
}

namespace {

double quad_form(const std::vector<double>& v, const SmallMatrix& w) {
  const int m = static_cast<int>(v.size());
  double q = 0.0;
  for (int i = 0; i < m; ++i) {
    double row = 0.0;
    for (int j = 0; j < m; ++j) row += w(i, j) * v[static_cast<std::size_t>(j)];
    q += v[static_cast<std::size_t>(i)] * row;
  }
  return q;
}

bool is_block_diagonal(const SmallMatrix& w, int half) {
  for (int i = 0; i < half; ++i) {
    for (int j = half; j < 2 * half; ++j) {
      if (w(i, j) != 0.0 || w(j, i) != 0.0) return false;
    }
  }
  return true;
}

// Golden-section minimization of f on [lo, hi].
double golden_min(const std::function<double(double)>& f, double lo, double hi,
                  double tol, int max_iter) {
  const double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < max_iter && (b - a) > tol; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

struct GridEval {
  std::vector<double> nodes;
  // Per-node moment blocks; empty vector marks an inestimable node.
  std::vector<std::vector<double>> a_vec, b_vec;
  std::vector<double> p00, p01;
};

GridEval evaluate_grid(const PropensitySource& src, const kreg::Interval& s0,
                       double x0, int grid_size) {
  if (grid_size < 50) throw InvalidArgument("matching: grid_size >= 50 required");
  if (!s0.contains(x0)) {
    throw InvalidArgument("matching: x0 must lie in the trimmed support");
  }
  GridEval g;
  g.nodes.resize(static_cast<std::size_t>(grid_size));
  const double step = s0.width() / (grid_size - 1);
  for (int i = 0; i < grid_size; ++i) g.nodes[static_cast<std::size_t>(i)] = s0.lo + step * i;
  g.p00 = src.p(x0, 0);
  g.p01 = src.p(x0, 1);
  const int kd = src.k_d();
  g.a_vec.resize(g.nodes.size());
  g.b_vec.resize(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    try {
      std::vector<double> p1 = src.p(g.nodes[i], 1);
      std::vector<double> p0 = src.p(g.nodes[i], 0);
      g.a_vec[i].resize(static_cast<std::size_t>(kd - 1));
      g.b_vec[i].resize(static_cast<std::size_t>(kd - 1));
      for (int d = 0; d < kd - 1; ++d) {
        g.a_vec[i][static_cast<std::size_t>(d)] = p1[d] - g.p00[d];
        g.b_vec[i][static_cast<std::size_t>(d)] = p0[d] - g.p01[d];
      }
    } catch (const InsufficientLocalData&) {
      // node skipped
    }
  }
  return g;
}

}  // namespace

double qx_objective(const PropensitySource& src, double x0, double x1,
                    double x2, const SmallMatrix& w) {
  return quad_form(delta_p(src, x0, x1, x2), w);
}

double qx_objective(const kreg::Sample& s, double x0, double x1, double x2,
                    const SmallMatrix& w, double h_x) {
  kreg::Engine e(s);
  SamplePropensities src(e, h_x);
  return qx_objective(src, x0, x1, x2, w);
}

SetEstimate estimate_matching_set(const PropensitySource& src,
                                  const kreg::Interval& s0,
                                  const MatchingConfig& cfg,
                                  const SmallMatrix& w, double a_n) {
  const int kd = src.k_d();
  const int half = kd - 1;
  if (w.rows() != 2 * half || w.cols() != 2 * half) {
    throw InvalidArgument("estimate_matching_set: weighting matrix size mismatch");
  }
  GridEval g = evaluate_grid(src, s0, cfg.x0, cfg.grid_size);
  const std::size_t m = g.nodes.size();

  SetEstimate out;
  out.grid = g.nodes;
  out.grid_step = g.nodes[1] - g.nodes[0];
  out.a_n = a_n;

  const double inf = std::numeric_limits<double>::infinity();
  if (is_block_diagonal(w, half)) {
    // Separable objective: q(x1, x2) = q1(x1) + q2(x2).
    std::vector<double> q1(m, inf), q2(m, inf);
    for (std::size_t i = 0; i < m; ++i) {
      if (g.a_vec[i].empty()) continue;
      double s1 = 0.0, s2 = 0.0;
      for (int r = 0; r < half; ++r) {
        for (int c = 0; c < half; ++c) {
          s1 += g.a_vec[i][static_cast<std::size_t>(r)] * w(r, c) *
                g.a_vec[i][static_cast<std::size_t>(c)];
          s2 += g.b_vec[i][static_cast<std::size_t>(r)] * w(half + r, half + c) *
                g.b_vec[i][static_cast<std::size_t>(c)];
        }
      }
      q1[i] = s1;
      q2[i] = s2;
    }
    std::size_t i1 = 0, i2 = 0;
    double m1 = inf, m2 = inf;
    for (std::size_t i = 0; i < m; ++i) {
      if (q1[i] < m1) {
        m1 = q1[i];
        i1 = i;
      }
      if (q2[i] < m2) {
        m2 = q2[i];
        i2 = i;
      }
    }
    if (!std::isfinite(m1) || !std::isfinite(m2)) {
      throw InsufficientLocalData("estimate_matching_set: no estimable grid node");
    }
    out.q_min = m1 + m2;
    if (cfg.slack_mode == SlackMode::point) {
      out.pairs.push_back({static_cast<int>(i1), static_cast<int>(i2),
                           g.nodes[i1], g.nodes[i2], out.q_min});
      return out;
    }
    const double cap = out.q_min + a_n * a_n;
    for (std::size_t i = 0; i < m; ++i) {
      if (!(q1[i] + m2 <= cap)) continue;
      for (std::size_t j = 0; j < m; ++j) {
        double q = q1[i] + q2[j];
        if (q <= cap) {
          out.pairs.push_back({static_cast<int>(i), static_cast<int>(j),
                               g.nodes[i], g.nodes[j], q});
        }
      }
    }
    return out;
  }

  // General PSD weight: full product-grid scan.
  double qmin = inf;
  std::size_t b1 = 0, b2 = 0;
  std::vector<double> v(static_cast<std::size_t>(2 * half));
  std::vector<std::vector<double>> qrow(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (g.a_vec[i].empty()) continue;
    qrow[i].assign(m, inf);
    for (std::size_t j = 0; j < m; ++j) {
      if (g.b_vec[j].empty()) continue;
      for (int r = 0; r < half; ++r) {
        v[static_cast<std::size_t>(r)] = g.a_vec[i][static_cast<std::size_t>(r)];
        v[static_cast<std::size_t>(half + r)] = g.b_vec[j][static_cast<std::size_t>(r)];
      }
      double q = quad_form(v, w);
      qrow[i][j] = q;
      if (q < qmin) {
        qmin = q;
        b1 = i;
        b2 = j;
      }
    }
  }
  if (!std::isfinite(qmin)) {
    throw InsufficientLocalData("estimate_matching_set: no estimable grid node");
  }
  out.q_min = qmin;
  if (cfg.slack_mode == SlackMode::point) {
    out.pairs.push_back({static_cast<int>(b1), static_cast<int>(b2),
                         g.nodes[b1], g.nodes[b2], qmin});
    return out;
  }
  const double cap = qmin + a_n * a_n;
  for (std::size_t i = 0; i < m; ++i) {
    if (qrow[i].empty()) continue;
    for (std::size_t j = 0; j < m; ++j) {
      if (qrow[i][j] <= cap) {
        out.pairs.push_back({static_cast<int>(i), static_cast<int>(j),
                             g.nodes[i], g.nodes[j], qrow[i][j]});
      }
    }
  }
  return out;
}

std::vector<RefinedPair> refine_isolated(const PropensitySource& src,
                                         const SetEstimate& set,
                                         const MatchingConfig& cfg,
                                         const SmallMatrix& w, double b_n,
                                         const kreg::Interval& s0,
                                         double x_scale) {
  std::vector<RefinedPair> out;
  if (set.pairs.empty()) return out;

  // Connected components under Chebyshev adjacency of one grid step.
  const std::size_t m = set.pairs.size();
  std::vector<int> comp(m, -1);
  int n_comp = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (comp[i] >= 0) continue;
    std::vector<std::size_t> stack{i};
    comp[i] = n_comp;
    while (!stack.empty()) {
      std::size_t cur = stack.back();
      stack.pop_back();
      for (std::size_t j = 0; j < m; ++j) {
        if (comp[j] >= 0) continue;
        if (std::abs(set.pairs[cur].i1 - set.pairs[j].i1) <= 1 &&
            std::abs(set.pairs[cur].i2 - set.pairs[j].i2) <= 1) {
          comp[j] = n_comp;
          stack.push_back(j);
        }
      }
    }
    ++n_comp;
  }

  const double tol = cfg.refine_tol_scale * x_scale;
  for (int c = 0; c < n_comp; ++c) {
    double lo1 = 1e300, hi1 = -1e300, lo2 = 1e300, hi2 = -1e300;
    double best_q = 1e300, best_x1 = 0.0, best_x2 = 0.0;
    int size = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (comp[i] != c) continue;
      ++size;
      lo1 = std::min(lo1, set.pairs[i].x1);
      hi1 = std::max(hi1, set.pairs[i].x1);
      lo2 = std::min(lo2, set.pairs[i].x2);
      hi2 = std::max(hi2, set.pairs[i].x2);
      if (set.pairs[i].q < best_q) {
        best_q = set.pairs[i].q;
        best_x1 = set.pairs[i].x1;
        best_x2 = set.pairs[i].x2;
      }
    }
    // Only clusters fully covered by one b_n-square are isolated.
    if (hi1 - lo1 > b_n || hi2 - lo2 > b_n) continue;

    // Local parameter space: the b_n-square around the cluster, clipped.
    double a1 = std::max(s0.lo, std::min(0.5 * (lo1 + hi1) - 0.5 * b_n, best_x1));
    double b1 = std::min(s0.hi, std::max(0.5 * (lo1 + hi1) + 0.5 * b_n, best_x1));
    double a2 = std::max(s0.lo, std::min(0.5 * (lo2 + hi2) - 0.5 * b_n, best_x2));
    double b2 = std::min(s0.hi, std::max(0.5 * (lo2 + hi2) + 0.5 * b_n, best_x2));

    double x1 = best_x1, x2 = best_x2;
    double q_prev = best_q;
    for (int it = 0; it < cfg.refine_max_iter; ++it) {
      x1 = golden_min(
          [&](double t) { return qx_objective(src, cfg.x0, t, x2, w); }, a1, b1,
          tol, 80);
      x2 = golden_min(
          [&](double t) { return qx_objective(src, cfg.x0, x1, t, w); }, a2, b2,
          tol, 80);
      double q_now = qx_objective(src, cfg.x0, x1, x2, w);
      if (q_prev - q_now < 1e-14) {
        q_prev = q_now;
        break;
      }
      q_prev = q_now;
    }
    double q_final = std::min(q_prev, best_q);
    if (q_prev > best_q) {
      x1 = best_x1;
      x2 = best_x2;
    }
    out.push_back({x1, x2, q_final, size});
  }
  return out;
}

namespace {

// Multinomial covariance block at one cell divided by f_XZ:
//   M[i][j] = (1(i==j) p_i - p_i p_j) / f.
void add_cell_block(SmallMatrix& block, const std::vector<double>& p, double f) {
  const int half = block.rows();
  for (int i = 0; i < half; ++i) {
    for (int j = 0; j < half; ++j) {
      double v = (i == j ? p[static_cast<std::size_t>(i)] : 0.0) -
                 p[static_cast<std::size_t>(i)] * p[static_cast<std::size_t>(j)];
      block(i, j) += v / f;
    }
  }
}

}  // namespace

MatchingFit two_step_matching(const kreg::Engine& e, const kreg::Sample& s,
                              const MatchingConfig& cfg, double h_x) {
  const int kd = e.k_d();
  if (kd < 2 || 2 * (kd - 1) > num::SmallMatrix::kMaxDim) {
    throw InvalidArgument("two_step_matching: unsupported |S(D)|");
  }
  const int half = kd - 1;
  kreg::Interval s0 = kreg::trimmed_support(s, h_x);
  SamplePropensities src(e, h_x);

  const double a_n = slack_a_n(s.n(), h_x, cfg.slack_multiplier);

  // Step 1: identity weight.
  MatchingConfig point_cfg = cfg;
  point_cfg.slack_mode = SlackMode::point;
  SmallMatrix w1 = SmallMatrix::identity(2 * half);
  SetEstimate step1 = estimate_matching_set(src, s0, point_cfg, w1, a_n);
  double xm1 = step1.pairs[0].x1;
  double xm2 = step1.pairs[0].x2;

  // Sigma_x at the step-1 estimates: kappa * blockdiag(Sigma_x1, Sigma_x2)
  // with cells (x0,0)+(xm1,1) in block 1 and (x0,1)+(xm2,0) in block 2.
  MatchingFit fit;
  fit.sigma_x1 = SmallMatrix(half, half);
  fit.sigma_x2 = SmallMatrix(half, half);
  try {
    add_cell_block(fit.sigma_x1, src.p(cfg.x0, 0), e.f_xz(cfg.x0, 0, h_x));
    add_cell_block(fit.sigma_x1, src.p(xm1, 1), e.f_xz(xm1, 1, h_x));
    add_cell_block(fit.sigma_x2, src.p(cfg.x0, 1), e.f_xz(cfg.x0, 1, h_x));
    add_cell_block(fit.sigma_x2, src.p(xm2, 0), e.f_xz(xm2, 0, h_x));
  } catch (const InsufficientLocalData&) {
    throw WeakIdentification("two_step_matching: variance cells inestimable");
  }
  fit.sigma_x = SmallMatrix(2 * half, 2 * half);
  for (int i = 0; i < half; ++i) {
    for (int j = 0; j < half; ++j) {
      fit.sigma_x(i, j) = kern::kKappa * fit.sigma_x1(i, j);
      fit.sigma_x(half + i, half + j) = kern::kKappa * fit.sigma_x2(i, j);
    }
  }

  SmallMatrix w2;
  try {
    w2 = num::inverse_psd(fit.sigma_x);
  } catch (const SingularMatrix&) {
    throw WeakIdentification("two_step_matching: Sigma_x singular");
  }

  // Step 2: optimally weighted re-search (and the set, if requested).
  SetEstimate step2 = estimate_matching_set(src, s0, point_cfg, w2, a_n);
  fit.xm1_hat = step2.pairs[0].x1;
  fit.xm2_hat = step2.pairs[0].x2;
  fit.q_min = step2.q_min;
  if (cfg.slack_mode == SlackMode::set) {
    // The slack rate a_n is calibrated to the sup-norm noise of the raw
    // propensity differences, so the set is built under the first-step
    // identity weight; the point estimate stays optimally weighted.
    MatchingConfig set_cfg = cfg;
    SetEstimate full = estimate_matching_set(src, s0, set_cfg, w1, a_n);
    fit.set_estimate = full.pairs;
  }

  fit.delta_p_hat = delta_p(src, cfg.x0, fit.xm1_hat, fit.xm2_hat);
  fit.n = s.n();
  fit.h_x = h_x;
  fit.x0 = cfg.x0;

  // Jacobian of delta_p in (x1, x2) by central differences, step h_x / 10.
  const double step = h_x / 10.0;
  SmallMatrix jac(2 * half, 2);
  try {
    std::vector<double> a_up = src.p(fit.xm1_hat + step, 1);
    std::vector<double> a_dn = src.p(fit.xm1_hat - step, 1);
    std::vector<double> b_up = src.p(fit.xm2_hat + step, 0);
    std::vector<double> b_dn = src.p(fit.xm2_hat - step, 0);
    for (int d = 0; d < half; ++d) {
      jac(d, 0) = (a_up[d] - a_dn[d]) / (2.0 * step);
      jac(half + d, 1) = (b_up[d] - b_dn[d]) / (2.0 * step);
    }
  } catch (const InsufficientLocalData&) {
    throw WeakIdentification("two_step_matching: derivative cells inestimable");
  }

  SmallMatrix info = jac.transpose() * w2 * jac;  // J' Sigma^{-1} J
  SmallMatrix var;
  try {
    var = num::inverse_psd(info);
  } catch (const SingularMatrix&) {
    throw WeakIdentification("two_step_matching: flat propensity derivative");
  }
  const double scale = 1.0 / (static_cast<double>(s.n()) * h_x);
  fit.se1 = std::sqrt(var(0, 0) * scale);
  fit.se2 = std::sqrt(var(1, 1) * scale);

  fit.j = jtest_matching(fit);
  return fit;
}

MatchingFit two_step_matching(const kreg::Sample& s, const MatchingConfig& cfg,
                              double h_x, double min_effective_count) {
  kreg::Engine e(s, min_effective_count);
  return two_step_matching(e, s, cfg, h_x);
}

JTests jtest_matching(const MatchingFit& fit) {
  JTests out;
  const int half = fit.sigma_x1.rows();
  const int kd = half + 1;
  out.df_block = kd - 2;
  out.df_joint = 2 * (kd - 2);
  if (out.df_block < 1) return out;  // just-identified: no test

  const double nh = static_cast<double>(fit.n) * fit.h_x;
  SmallMatrix w = num::inverse_psd(fit.sigma_x);
  out.j_x = nh * quad_form(fit.delta_p_hat, w);
  out.j_x_p = num::chi_square_sf(out.j_x, out.df_joint);

  std::vector<double> d1(fit.delta_p_hat.begin(), fit.delta_p_hat.begin() + half);
  std::vector<double> d2(fit.delta_p_hat.begin() + half, fit.delta_p_hat.end());
  SmallMatrix w1 = num::inverse_psd(fit.sigma_x1.scaled(kern::kKappa));
  SmallMatrix w2 = num::inverse_psd(fit.sigma_x2.scaled(kern::kKappa));
  out.j_x1 = nh * quad_form(d1, w1);
  out.j_x2 = nh * quad_form(d2, w2);
  out.j_x1_p = num::chi_square_sf(out.j_x1, out.df_block);
  out.j_x2_p = num::chi_square_sf(out.j_x2, out.df_block);
  return out;
}

}  // namespace mpt::matching
