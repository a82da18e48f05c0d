#include "mpt/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mpt::num {

double std_normal_cdf(double x) {
  return 0.5 * std::erfc(-x * 0.7071067811865475244);
}

double std_normal_pdf(double x) {
  return 0.3989422804014326779 * std::exp(-0.5 * x * x);
}

namespace {

// Acklam's rational approximation to the normal quantile (relative error
// below 1.2e-9), used as the starting point for a Halley refinement.
double quantile_initial(double p) {
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  double q = p - 0.5;
  double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw InvalidArgument("std_normal_quantile: p must lie strictly in (0,1)");
  }
  double x = quantile_initial(p);
  // One Halley step against the high-precision CDF.
  double e = std_normal_cdf(x) - p;
  double u = e / std_normal_pdf(x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double chi_square_sf(double x, int k) {
  if (x < 0.0) throw InvalidArgument("chi_square_sf: x must be >= 0");
  if (k == 1) return 2.0 * (1.0 - std_normal_cdf(std::sqrt(x)));
  if (k == 2) return std::exp(-0.5 * x);
  throw InvalidArgument("chi_square_sf: only 1 or 2 degrees of freedom supported");
}

double chi_square_critical(int k, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw InvalidArgument("chi_square_critical: alpha must lie in (0,1)");
  }
  if (k == 1) {
    double z = std_normal_quantile(1.0 - 0.5 * alpha);
    return z * z;
  }
  if (k == 2) return -2.0 * std::log(alpha);
  throw InvalidArgument("chi_square_critical: only 1 or 2 degrees of freedom supported");
}

SmallMatrix::SmallMatrix(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows <= 0 || cols <= 0 || rows > kMaxDim || cols > kMaxDim) {
    throw InvalidArgument("SmallMatrix: dimensions must be in [1,8]");
  }
}

SmallMatrix SmallMatrix::identity(int n) {
  SmallMatrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

SmallMatrix SmallMatrix::column(const std::vector<double>& v) {
  SmallMatrix m(static_cast<int>(v.size()), 1);
  for (int i = 0; i < m.rows(); ++i) m(i, 0) = v[static_cast<std::size_t>(i)];
  return m;
}

SmallMatrix SmallMatrix::transpose() const {
  SmallMatrix t(cols_, rows_);
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

SmallMatrix SmallMatrix::operator*(const SmallMatrix& rhs) const {
  if (cols_ != rhs.rows_) throw InvalidArgument("SmallMatrix: size mismatch in product");
  SmallMatrix out(rows_, rhs.cols_);
  for (int r = 0; r < rows_; ++r) {
    for (int c = 0; c < rhs.cols_; ++c) {
      double s = 0.0;
      for (int k = 0; k < cols_; ++k) s += (*this)(r, k) * rhs(k, c);
      out(r, c) = s;
    }
  }
  return out;
}

SmallMatrix SmallMatrix::operator+(const SmallMatrix& rhs) const {
  if (rows_ != rhs.rows_ || cols_ != rhs.cols_)
    throw InvalidArgument("SmallMatrix: size mismatch in sum");
  SmallMatrix out(rows_, cols_);
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c) out(r, c) = (*this)(r, c) + rhs(r, c);
  return out;
}

SmallMatrix SmallMatrix::operator-(const SmallMatrix& rhs) const {
  if (rows_ != rhs.rows_ || cols_ != rhs.cols_)
    throw InvalidArgument("SmallMatrix: size mismatch in difference");
  SmallMatrix out(rows_, cols_);
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c) out(r, c) = (*this)(r, c) - rhs(r, c);
  return out;
}

SmallMatrix SmallMatrix::scaled(double c) const {
  SmallMatrix out(rows_, cols_);
  for (int r = 0; r < rows_; ++r)
    for (int k = 0; k < cols_; ++k) out(r, k) = (*this)(r, k) * c;
  return out;
}

bool SmallMatrix::is_symmetric(double tol) const {
  if (rows_ != cols_) return false;
  for (int r = 0; r < rows_; ++r)
    for (int c = r + 1; c < cols_; ++c)
      if (std::abs((*this)(r, c) - (*this)(c, r)) > tol) return false;
  return true;
}

double SmallMatrix::max_abs() const {
  double m = 0.0;
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c) m = std::max(m, std::abs((*this)(r, c)));
  return m;
}

SmallMatrix solve_psd(const SmallMatrix& a, const SmallMatrix& b) {
  if (a.rows() != a.cols()) throw InvalidArgument("solve_psd: A must be square");
  if (a.rows() != b.rows()) throw InvalidArgument("solve_psd: dimension mismatch");
  const int n = a.rows();

  // Cholesky A = L L'. Pivots are the d_i = L(i,i)^2.
  SmallMatrix l(n, n);
  double max_pivot = 0.0, min_pivot = 0.0;
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (j == 0) {
      max_pivot = min_pivot = d;
    } else {
      max_pivot = std::max(max_pivot, d);
      min_pivot = std::min(min_pivot, d);
    }
    if (!(d > 0.0) || min_pivot < 1e-12 * max_pivot) {
      throw SingularMatrix("solve_psd: pivot ratio below tolerance");
    }
    l(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }

  SmallMatrix x(n, b.cols());
  for (int c = 0; c < b.cols(); ++c) {
    // Forward substitution L y = b.
    std::array<double, SmallMatrix::kMaxDim> y{};
    for (int i = 0; i < n; ++i) {
      double s = b(i, c);
      for (int k = 0; k < i; ++k) s -= l(i, k) * y[static_cast<std::size_t>(k)];
      y[static_cast<std::size_t>(i)] = s / l(i, i);
    }
    // Back substitution L' x = y.
    for (int i = n - 1; i >= 0; --i) {
      double s = y[static_cast<std::size_t>(i)];
      for (int k = i + 1; k < n; ++k) s -= l(k, i) * x(k, c);
      x(i, c) = s / l(i, i);
    }
  }
  return x;
}

SmallMatrix inverse_psd(const SmallMatrix& a) {
  return solve_psd(a, SmallMatrix::identity(a.rows()));
}

std::vector<double> symmetric_eigenvalues(const SmallMatrix& a) {
  if (a.rows() != a.cols()) throw InvalidArgument("symmetric_eigenvalues: square input required");
  const int n = a.rows();
  SmallMatrix m = a;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
    if (off < 1e-28 * (1.0 + m.max_abs() * m.max_abs())) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (m(p, q) == 0.0) continue;
        double theta = (m(q, q) - m(p, p)) / (2.0 * m(p, q));
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double mkp = m(k, p), mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (int k = 0; k < n; ++k) {
          double mpk = m(p, k), mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
      }
    }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = m(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

double condition_number(const SmallMatrix& a) {
  SmallMatrix ata = a.transpose() * a;
  std::vector<double> ev = symmetric_eigenvalues(ata);
  double lo = std::max(ev.front(), 0.0);
  double hi = std::max(ev.back(), 0.0);
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return std::sqrt(hi / lo);
}

}  // namespace mpt::num
