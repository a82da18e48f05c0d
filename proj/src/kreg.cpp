#include "mpt/kreg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mpt::kreg {

void Sample::validate() const {
  const std::size_t m = y.size();
  if (m == 0) throw InvalidArgument("Sample: empty");
  if (d.size() != m || x.size() != m || z.size() != m) {
    throw InvalidArgument("Sample: column lengths differ");
  }
  if (k_d < 2 || k_d > 8 || k_z < 2 || k_z > 4) {
    throw InvalidArgument("Sample: unsupported support sizes");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (!std::isfinite(y[i]) || !std::isfinite(x[i])) {
      throw InvalidArgument("Sample: non-finite value at row " + std::to_string(i));
    }
    if (d[i] < 1 || d[i] > k_d) {
      throw InvalidArgument("Sample: d out of support at row " + std::to_string(i));
    }
    if (z[i] >= k_z) {
      throw InvalidArgument("Sample: z out of support at row " + std::to_string(i));
    }
  }
}

double sample_sd(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double t : v) ss += (t - mean) * (t - mean);
  return std::sqrt(ss / (n - 1.0));
}

Bandwidths Bandwidths::from_sample(const Sample& s, const BandwidthConfig& cfg) {
  Bandwidths b;
  double base = sample_sd(s.x) * std::pow(static_cast<double>(s.n()), -0.25);
  b.h_x = cfg.c_x * base;
  b.h_m = cfg.c_m * b.h_x;
  b.h_g = cfg.c_g * b.h_x;
  b.h_0 = cfg.c_0 * std::pow(b.h_g, 1.5);
  b.validate();
  return b;
}

void Bandwidths::validate() const {
  if (!(h_x > 0.0 && h_m > 0.0 && h_g > 0.0 && h_0 > 0.0)) {
    throw InvalidArgument("Bandwidths: all bandwidths must be positive");
  }
  if (!(h_m < h_x)) throw InvalidArgument("Bandwidths: h_m must be smaller than h_x");
  if (!(h_0 < h_g)) throw InvalidArgument("Bandwidths: h_0 must be smaller than h_g");
}

Interval trimmed_support(const Sample& s, double h_x) {
  std::vector<double> xs = s.x;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  std::size_t i_lo = static_cast<std::size_t>(
      std::ceil(0.02 * static_cast<double>(n)));
  std::size_t i_hi = static_cast<std::size_t>(
      std::floor(0.98 * static_cast<double>(n)));
  if (i_lo < 1) i_lo = 1;
  if (i_hi > n) i_hi = n;
  Interval s0{xs[i_lo - 1] + h_x, xs[i_hi - 1] - h_x};
  if (!(s0.lo < s0.hi)) {
    throw EmptyTrimmedSupport("trimmed_support: S0(X) is degenerate");
  }
  return s0;
}

Engine::Engine(const Sample& s, double min_effective_count)
    : k_d_(s.k_d), k_z_(s.k_z), min_count_(min_effective_count) {
  s.validate();
  const std::size_t n = s.n();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Total order over row contents: permutation-invariant sums.
  std::sort(idx.begin(), idx.end(), [&s](std::size_t a, std::size_t b) {
    if (s.x[a] != s.x[b]) return s.x[a] < s.x[b];
    if (s.y[a] != s.y[b]) return s.y[a] < s.y[b];
    if (s.d[a] != s.d[b]) return s.d[a] < s.d[b];
    return s.z[a] < s.z[b];
  });
  x_.resize(n);
  y_.resize(n);
  cell_.resize(n);
  d_.resize(n);
  z_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = idx[i];
    x_[i] = s.x[j];
    y_[i] = s.y[j];
    d_[i] = s.d[j];
    z_[i] = s.z[j];
    cell_[i] = static_cast<double>((s.d[j] - 1) * k_z_ + s.z[j]);
  }
}

Engine::Window Engine::window(double x0, double h) const {
  auto lo = std::lower_bound(x_.begin(), x_.end(), x0 - h);
  auto hi = std::upper_bound(x_.begin(), x_.end(), x0 + h);
  return {static_cast<std::size_t>(lo - x_.begin()),
          static_cast<std::size_t>(hi - x_.begin())};
}

Engine::Moments Engine::moments(double x0, double h) const {
  Window w = window(x0, h);
  Moments m;
  m.k_d = k_d_;
  m.k_z = k_z_;
  kern::accumulate_cells(x_.data() + w.lo, y_.data() + w.lo,
                         cell_.data() + w.lo, w.hi - w.lo, x0, 1.0 / h,
                         k_d_ * k_z_, m.sums);
  return m;
}

std::vector<double> Engine::propensity(const Moments& m, int z) const {
  double den = m.den_z(z);
  if (den < min_count_ * kern::kBiweightPeak) {
    throw InsufficientLocalData("propensity: kernel mass below floor at z=" +
                                std::to_string(z));
  }
  std::vector<double> p(static_cast<std::size_t>(k_d_));
  for (int d = 1; d <= k_d_; ++d) {
    p[static_cast<std::size_t>(d - 1)] = m.cell0(d, z) / den;
  }
  return p;
}

std::vector<double> Engine::propensity(double x0, int z, double h) const {
  return propensity(moments(x0, h), z);
}

double Engine::cond_mean(int d, double x0, int z, double h) const {
  Moments m = moments(x0, h);
  double den = m.cell0(d, z);
  if (den < min_count_ * kern::kBiweightPeak) {
    throw InsufficientLocalData("cond_mean: cell (d=" + std::to_string(d) +
                                ",z=" + std::to_string(z) + ") too thin at x=" +
                                std::to_string(x0));
  }
  return m.cell1(d, z) / den;
}

double Engine::cond_var(int d, double x0, int z, double h) const {
  Moments m = moments(x0, h);
  double den = m.cell0(d, z);
  if (den < min_count_ * kern::kBiweightPeak) {
    throw InsufficientLocalData("cond_var: cell too thin at x=" + std::to_string(x0));
  }
  double mean = m.cell1(d, z) / den;
  double v = m.cell2(d, z) / den - mean * mean;
  return std::max(v, 1e-10);
}

double Engine::f_xz(double x0, int z, double h) const {
  Moments m = moments(x0, h);
  return m.den_z(z) / (static_cast<double>(n()) * h);
}

double Engine::f_dxz(int d, double x0, int z, double h) const {
  Moments m = moments(x0, h);
  return m.cell0(d, z) / (static_cast<double>(n()) * h);
}

Engine::CellCdf Engine::cell_cdf(int d, double x0, int z, double h_g) const {
  Window w = window(x0, h_g);
  CellCdf c;
  std::vector<std::pair<double, double>> rows;  // (y, weight)
  rows.reserve(w.hi - w.lo);
  const double inv_h = 1.0 / h_g;
  for (std::size_t i = w.lo; i < w.hi; ++i) {
    if (d_[i] != d || z_[i] != z) continue;
    double v = (x_[i] - x0) * inv_h;
    double t = 1.0 - v * v;
    if (t <= 0.0) continue;
    rows.emplace_back(y_[i], kern::kBiweightPeak * t * t);
  }
  std::sort(rows.begin(), rows.end());
  c.ys_.resize(rows.size());
  c.w_.resize(rows.size());
  c.wcum_.resize(rows.size() + 1);
  c.wcum_[0] = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    c.ys_[i] = rows[i].first;
    c.w_[i] = rows[i].second;
    c.wcum_[i + 1] = c.wcum_[i] + rows[i].second;
  }
  c.wsum_ = c.wcum_.back();
  if (c.wsum_ < min_count_ * kern::kBiweightPeak) {
    throw InsufficientLocalData("cell_cdf: cell (d=" + std::to_string(d) +
                                ",z=" + std::to_string(z) + ") too thin at x=" +
                                std::to_string(x0));
  }
  return c;
}

double Engine::CellCdf::operator()(double y, double h_0) const {
  // Rows with ys <= y - h_0 contribute full weight; the h_0-band needs L.
  auto lo = std::upper_bound(ys_.begin(), ys_.end(), y - h_0);
  std::size_t i = static_cast<std::size_t>(lo - ys_.begin());
  double s = wcum_[i];
  for (; i < ys_.size() && ys_[i] < y + h_0; ++i) {
    s += w_[i] * kern::biweight_integral((y - ys_[i]) / h_0);
  }
  return s / wsum_;
}

double Engine::smoothed_cond_cdf(double y, int d, double x0, int z, double h_g,
                                 double h_0) const {
  return cell_cdf(d, x0, z, h_g)(y, h_0);
}

double kernel(double v) { return kern::biweight(v); }
double integrated_kernel(double v) { return kern::biweight_integral(v); }
double kappa_constant() { return kern::kKappa; }

double nw_propensity(const Sample& s, int d, double x, int z, double h) {
  Engine e(s);
  return e.propensity(x, z, h)[static_cast<std::size_t>(d - 1)];
}

double nw_cond_mean(const Sample& s, int d, double x, int z, double h) {
  Engine e(s);
  return e.cond_mean(d, x, z, h);
}

double smoothed_cond_cdf(const Sample& s, double y, int d, double x, int z,
                         double h_g, double h_0) {
  Engine e(s);
  return e.smoothed_cond_cdf(y, d, x, z, h_g, h_0);
}

}  // namespace mpt::kreg
