#include "mpt/dgp.hpp"

#include <cmath>
#include <limits>

namespace mpt::dgp {

using num::std_normal_cdf;
using num::std_normal_pdf;
using num::std_normal_quantile;

void OrderedChoiceSpec::validate() const {
  if (!(kappa1 < kappa2)) throw InvalidArgument("OrderedChoiceSpec: kappa1 < kappa2 required");
  if (!(std::abs(rho) < 1.0)) throw InvalidArgument("OrderedChoiceSpec: |rho| < 1 required");
  if (!(x_low < x_high)) throw InvalidArgument("OrderedChoiceSpec: x_low < x_high required");
  if (beta == 0.0) throw InvalidArgument("OrderedChoiceSpec: beta must be nonzero");
  if (!(z_prob > 0.0 && z_prob < 1.0)) throw InvalidArgument("OrderedChoiceSpec: z_prob in (0,1)");
}

kreg::Sample simulate(const OrderedChoiceSpec& spec, std::size_t n,
                      num::RngStream& rng) {
  spec.validate();
  if (n < 1) throw InvalidArgument("simulate: n >= 1 required");
  kreg::Sample s;
  s.k_d = 3;
  s.k_z = 2;
  s.y.resize(n);
  s.d.resize(n);
  s.x.resize(n);
  s.z.resize(n);
  const double rho_c = std::sqrt(1.0 - spec.rho * spec.rho);
  for (std::size_t i = 0; i < n; ++i) {
    double x = rng.uniform(spec.x_low, spec.x_high);
    int z = rng.bernoulli(spec.z_prob) ? 1 : 0;
    double e1 = rng.normal();
    double e2 = rng.normal();
    double u = e1;
    double v = spec.rho * e1 + rho_c * e2;
    double index = spec.beta * x + spec.alpha * z;
    int d;
    if (v < spec.kappa1 + index) {
      d = 1;
    } else if (v >= spec.kappa2 + index) {
      d = 3;
    } else {
      d = 2;
    }
    s.x[i] = x;
    s.z[i] = static_cast<std::uint8_t>(z);
    s.d[i] = static_cast<std::uint8_t>(d);
    s.y[i] = spec.gammas[static_cast<std::size_t>(d - 1)] * (x + 1.0) + u;
  }
  return s;
}

std::array<double, 3> true_propensity(const OrderedChoiceSpec& spec, double x,
                                      int z) {
  double index = spec.beta * x + spec.alpha * z;
  double p1 = std_normal_cdf(spec.kappa1 + index);
  double p3 = 1.0 - std_normal_cdf(spec.kappa2 + index);
  return {p1, 1.0 - p1 - p3, p3};
}

MatchingPointTruth true_matching_points(const OrderedChoiceSpec& spec, double x0) {
  if (spec.beta == 0.0) throw InvalidArgument("true_matching_points: beta must be nonzero");
  double shift = spec.alpha / spec.beta;
  MatchingPointTruth t;
  t.x_m1 = x0 - shift;
  t.x_m2 = x0 + shift;
  t.m1_in_support = t.x_m1 >= spec.x_low && t.x_m1 <= spec.x_high;
  t.m2_in_support = t.x_m2 >= spec.x_low && t.x_m2 <= spec.x_high;
  return t;
}

std::vector<MConnectedPoint> mconnected_chain(const OrderedChoiceSpec& spec,
                                              double x0, int max_depth) {
  if (spec.beta == 0.0) throw InvalidArgument("mconnected_chain: beta must be nonzero");
  const double shift = spec.alpha / spec.beta;
  std::vector<MConnectedPoint> out;
  for (int c = -max_depth; c <= max_depth; ++c) {
    double x = x0 + static_cast<double>(c) * shift;
    if (x < spec.x_low || x > spec.x_high) continue;
    MConnectedPoint pt;
    pt.x = x;
    // Walk outward from x0 one matching pair at a time. Moving left pairs
    // (prev, 0) with (prev - shift, 1); moving right pairs (prev, 1) with
    // (prev + shift, 0).
    int steps = std::abs(c);
    int dir = c < 0 ? -1 : 1;
    double prev = x0;
    for (int k = 0; k < steps; ++k) {
      double next = prev + dir * shift;
      if (dir < 0) {
        pt.chain.push_back({prev, 0, next, 1});
      } else {
        pt.chain.push_back({prev, 1, next, 0});
      }
      prev = next;
    }
    out.push_back(std::move(pt));
  }
  return out;
}

std::array<double, 3> true_m_separable(const OrderedChoiceSpec& spec, double x0) {
  return {spec.gammas[0] * (x0 + 1.0), spec.gammas[1] * (x0 + 1.0),
          spec.gammas[2] * (x0 + 1.0)};
}

std::array<double, 3> true_g_nonseparable(const OrderedChoiceSpec& spec,
                                          double x0, double u) {
  if (!(u > 0.0 && u < 1.0)) {
    throw InvalidArgument("true_g_nonseparable: u must lie strictly in (0,1)");
  }
  double q = std_normal_quantile(u);
  return {spec.gammas[0] * (x0 + 1.0) + q, spec.gammas[1] * (x0 + 1.0) + q,
          spec.gammas[2] * (x0 + 1.0) + q};
}

namespace {

// Selection interval of V for D = d at (x, z).
struct VInterval {
  double lo, hi;  // half-open (lo, hi]; +-inf allowed
};

VInterval v_interval(const OrderedChoiceSpec& spec, int d, double x, int z) {
  double index = spec.beta * x + spec.alpha * z;
  double t1 = spec.kappa1 + index;
  double t2 = spec.kappa2 + index;
  const double inf = std::numeric_limits<double>::infinity();
  if (d == 1) return {-inf, t1};
  if (d == 2) return {t1, t2};
  if (d == 3) return {t2, inf};
  throw InvalidArgument("v_interval: d must be 1, 2 or 3");
}

double interval_mass(const VInterval& iv) {
  return std_normal_cdf(iv.hi) - std_normal_cdf(iv.lo);
}

double pdf_or_zero(double t) {
  return std::isfinite(t) ? std_normal_pdf(t) : 0.0;
}

}  // namespace

double true_cond_mean(const OrderedChoiceSpec& spec, int d, double x, int z) {
  VInterval iv = v_interval(spec, d, x, z);
  double mass = interval_mass(iv);
  double ev = (pdf_or_zero(iv.lo) - pdf_or_zero(iv.hi)) / mass;
  return spec.gammas[static_cast<std::size_t>(d - 1)] * (x + 1.0) + spec.rho * ev;
}

double true_cond_var(const OrderedChoiceSpec& spec, int d, double x, int z) {
  VInterval iv = v_interval(spec, d, x, z);
  double mass = interval_mass(iv);
  double a = std::isfinite(iv.lo) ? iv.lo * std_normal_pdf(iv.lo) : 0.0;
  double b = std::isfinite(iv.hi) ? iv.hi * std_normal_pdf(iv.hi) : 0.0;
  double ev = (pdf_or_zero(iv.lo) - pdf_or_zero(iv.hi)) / mass;
  double var_v = 1.0 + (a - b) / mass - ev * ev;
  return spec.rho * spec.rho * var_v + (1.0 - spec.rho * spec.rho);
}

double true_cond_cdf(const OrderedChoiceSpec& spec, double y, int d, double x,
                     int z) {
  VInterval iv = v_interval(spec, d, x, z);
  double mass = interval_mass(iv);
  double ustar = y - spec.gammas[static_cast<std::size_t>(d - 1)] * (x + 1.0);
  double sig = std::sqrt(1.0 - spec.rho * spec.rho);
  double lo = std::max(iv.lo, -10.0);
  double hi = std::min(iv.hi, 10.0);
  if (!(hi > lo)) return ustar > 0.0 ? 1.0 : 0.0;
  // Composite Simpson on P(U <= ustar | V = v) * phi(v).
  const int m = 400;  // even
  double hstep = (hi - lo) / m;
  auto f = [&](double v) {
    return std_normal_pdf(v) * std_normal_cdf((ustar - spec.rho * v) / sig);
  };
  double s = f(lo) + f(hi);
  for (int i = 1; i < m; ++i) {
    s += f(lo + i * hstep) * (i % 2 == 1 ? 4.0 : 2.0);
  }
  double val = s * hstep / 3.0 / mass;
  return std::min(1.0, std::max(0.0, val));
}

double true_cond_pdf(const OrderedChoiceSpec& spec, double y, int d, double x,
                     int z) {
  VInterval iv = v_interval(spec, d, x, z);
  double mass = interval_mass(iv);
  double ustar = y - spec.gammas[static_cast<std::size_t>(d - 1)] * (x + 1.0);
  double sig = std::sqrt(1.0 - spec.rho * spec.rho);
  double lo = std::max(iv.lo, -10.0);
  double hi = std::min(iv.hi, 10.0);
  if (!(hi > lo)) return 0.0;
  const int m = 400;
  double hstep = (hi - lo) / m;
  auto f = [&](double v) {
    return std_normal_pdf(v) * std_normal_pdf((ustar - spec.rho * v) / sig) / sig;
  };
  double s = f(lo) + f(hi);
  for (int i = 1; i < m; ++i) {
    s += f(lo + i * hstep) * (i % 2 == 1 ? 4.0 : 2.0);
  }
  return s * hstep / 3.0 / mass;
}

void TwoBinarySpec::validate() const {
  if (!(std::abs(v_corr) < 1.0)) throw InvalidArgument("TwoBinarySpec: |v_corr| < 1 required");
  if (!(x_low < x_high)) throw InvalidArgument("TwoBinarySpec: x_low < x_high required");
  if (!(z_prob > 0.0 && z_prob < 1.0)) throw InvalidArgument("TwoBinarySpec: z_prob in (0,1)");
}

kreg::Sample simulate_two_binary(const TwoBinarySpec& spec, std::size_t n,
                                 num::RngStream& rng) {
  spec.validate();
  if (n < 1) throw InvalidArgument("simulate_two_binary: n >= 1 required");
  kreg::Sample s;
  s.k_d = 4;
  s.k_z = 2;
  s.y.resize(n);
  s.d.resize(n);
  s.x.resize(n);
  s.z.resize(n);
  const double c = std::sqrt(1.0 - spec.v_corr * spec.v_corr);
  for (std::size_t i = 0; i < n; ++i) {
    double x = rng.uniform(spec.x_low, spec.x_high);
    int z = rng.bernoulli(spec.z_prob) ? 1 : 0;
    double e1 = rng.normal();
    double e2 = rng.normal();
    double u = rng.normal();
    double v1 = e1;
    double v2 = spec.v_corr * e1 + c * e2;
    int d1 = spec.gamma1(x, z) <= v1 ? 1 : 0;
    int d2 = spec.gamma2(x, z) <= v2 ? 1 : 0;
    int d0 = 1 + 2 * d1 + d2;  // (0,0),(0,1),(1,0),(1,1) -> 1..4
    s.x[i] = x;
    s.z[i] = static_cast<std::uint8_t>(z);
    s.d[i] = static_cast<std::uint8_t>(d0);
    s.y[i] = spec.slopes[static_cast<std::size_t>(d0 - 1)] * (x + 1.0) + u;
  }
  return s;
}

std::array<double, 4> two_binary_propensity(const TwoBinarySpec& spec, double x,
                                            int z) {
  // P(V1 < g1, V2 < g2) for a standard bivariate normal by quadrature over v1.
  double g1 = spec.gamma1(x, static_cast<double>(z));
  double g2 = spec.gamma2(x, static_cast<double>(z));
  double sig = std::sqrt(1.0 - spec.v_corr * spec.v_corr);
  const int m = 400;
  double lo = -10.0, hi = std::min(g1, 10.0);
  double p00 = 0.0;
  if (hi > lo) {
    double hstep = (hi - lo) / m;
    auto f = [&](double v) {
      return std_normal_pdf(v) *
             std_normal_cdf((g2 - spec.v_corr * v) / sig);
    };
    double s = f(lo) + f(hi);
    for (int i = 1; i < m; ++i) s += f(lo + i * hstep) * (i % 2 == 1 ? 4.0 : 2.0);
    p00 = s * hstep / 3.0;
  }
  double p1 = std_normal_cdf(g1);   // P(V1 < g1) => D1 = 0
  double p2 = std_normal_cdf(g2);   // P(V2 < g2) => D2 = 0
  double pv1lo_v2hi = p1 - p00;     // V1 < g1, V2 >= g2
  double pv1hi_v2lo = p2 - p00;     // V1 >= g1, V2 < g2
  double pv1hi_v2hi = 1.0 - p1 - p2 + p00;
  return {p00, pv1lo_v2hi, pv1hi_v2lo, pv1hi_v2hi};
}

}  // namespace mpt::dgp
