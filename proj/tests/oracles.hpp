#pragma once

// Test-only oracles, independent of the library implementations they check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace oracles {

// High-precision erf by Taylor series (|z| <= 2.8), long double arithmetic.
inline long double erf_series(long double z) {
  const long double two_over_sqrt_pi = 1.12837916709551257389615890312154517L;
  long double term = z;
  long double sum = z;
  for (int k = 1; k < 200; ++k) {
    term *= -z * z / k;
    long double add = term / (2 * k + 1);
    sum += add;
    if (std::abs((double)add) < 1e-22L * std::abs((double)sum + 1e-30)) break;
  }
  return two_over_sqrt_pi * sum;
}

// erfc continued fraction for z >= 2: erfc(z) = e^{-z^2}/sqrt(pi) *
// 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...)))), modified Lentz.
inline long double erfc_cf(long double z) {
  const long double tiny = 1e-300L;
  long double f = z, c = z, d = 0.0L;
  for (int k = 1; k < 300; ++k) {
    long double a = k * 0.5L;
    d = z + a * d;
    if (d == 0.0L) d = tiny;
    c = z + a / c;
    if (c == 0.0L) c = tiny;
    d = 1.0L / d;
    long double mult = c * d;
    f *= mult;
    if (std::abs((double)(mult - 1.0L)) < 1e-20) break;
  }
  const long double inv_sqrt_pi = 0.564189583547756286948079451560772586L;
  return std::exp(-z * z) * inv_sqrt_pi / f;
}

// Standard normal CDF oracle, accurate to well below 1e-14 absolute.
inline double normal_cdf(double x) {
  const long double inv_sqrt2 = 0.707106781186547524400844362104849039L;
  long double z = x * inv_sqrt2;
  if (z < -2.5L) return (double)(0.5L * erfc_cf(-z));
  if (z > 2.5L) return (double)(1.0L - 0.5L * erfc_cf(z));
  return (double)(0.5L + 0.5L * erf_series(z));
}

// Composite Simpson quadrature.
inline double simpson(const std::function<double(double)>& f, double a,
                      double b, int m) {
  double h = (b - a) / m;
  double s = f(a) + f(b);
  for (int i = 1; i < m; ++i) s += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace oracles
