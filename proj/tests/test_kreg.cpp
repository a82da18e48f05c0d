#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mpt/dgp.hpp"
#include "mpt/kreg.hpp"
#include "mpt/numerics.hpp"
#include "oracles.hpp"

using namespace mpt;
using kreg::Engine;
using kreg::Sample;

namespace {

Sample benchmark_sample(std::size_t n, std::uint64_t seed) {
  dgp::OrderedChoiceSpec spec;
  num::RngStream rng(seed);
  return dgp::simulate(spec, n, rng);
}

}  // namespace

TEST_CASE("kreg wrappers expose kernel primitives") {
  CHECK(kreg::kernel(0.0) == doctest::Approx(15.0 / 16.0));
  CHECK(kreg::kernel(1.2) == 0.0);
  CHECK(kreg::integrated_kernel(0.0) == doctest::Approx(0.5));
  CHECK(kreg::kappa_constant() == doctest::Approx(5.0 / 7.0));
}

TEST_CASE("bandwidth defaults and invariants") {
  Sample s = benchmark_sample(2000, 1);
  auto bw = kreg::Bandwidths::from_sample(s);
  double sd = kreg::sample_sd(s.x);
  CHECK(bw.h_x == doctest::Approx(sd * std::pow(2000.0, -0.25)));
  CHECK(bw.h_m == doctest::Approx(0.7 * bw.h_x));
  CHECK(bw.h_g == doctest::Approx(bw.h_m));
  CHECK(bw.h_0 == doctest::Approx(std::pow(bw.h_g, 1.5)));
  CHECK(bw.h_m < bw.h_x);
  CHECK(bw.h_0 < bw.h_g);

  kreg::Bandwidths bad = bw;
  bad.h_m = bw.h_x * 1.1;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("trimmed support uses shrunk order statistics") {
  Sample s = benchmark_sample(2000, 2);
  auto s0 = kreg::trimmed_support(s, 0.25);
  std::vector<double> xs = s.x;
  std::sort(xs.begin(), xs.end());
  CHECK(s0.lo == doctest::Approx(xs[39] + 0.25));    // ceil(0.02*2000) = 40
  CHECK(s0.hi == doctest::Approx(xs[1959] - 0.25));  // floor(0.98*2000) = 1960
  CHECK(s0.lo < s0.hi);
  CHECK_THROWS_AS(kreg::trimmed_support(s, 10.0), EmptyTrimmedSupport);
}

TEST_CASE("propensity: degenerate cell, simplex, convergence to truth") {
  // All local observations share D = 2 -> propensity exactly 1.
  Sample s;
  s.k_d = 3;
  s.k_z = 2;
  for (int i = 0; i < 40; ++i) {
    s.y.push_back(static_cast<double>(i));
    s.x.push_back(0.01 * i);
    s.d.push_back(2);
    s.z.push_back(static_cast<std::uint8_t>(i % 2));
  }
  Engine e(s);
  auto p = e.propensity(0.2, 0, 0.5);
  CHECK(p[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p[0] == 0.0);
  CHECK(p[2] == 0.0);

  // Benchmark DGP at n = 1e5: p1(0,0) near Phi(-0.7); simplex exact.
  Sample big = benchmark_sample(100000, 3);
  Engine eb(big);
  auto bw = kreg::Bandwidths::from_sample(big);
  auto pb = eb.propensity(0.0, 0, bw.h_x);
  CHECK(std::abs(pb[0] - 0.2420) < 0.02);
  num::RngStream rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    double x = rng.uniform(-2.5, 2.5);
    int z = rep % 2;
    auto q = eb.propensity(x, z, bw.h_x);
    double sum = 0.0;
    for (double c : q) {
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
      sum += c;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("conditional mean: constant cell and simulation oracle") {
  Sample s;
  s.k_d = 2;
  s.k_z = 2;
  for (int i = 0; i < 60; ++i) {
    s.y.push_back(i % 3 == 0 ? 7.25 : -1.0);
    s.x.push_back(0.02 * i - 0.6);
    s.d.push_back(static_cast<std::uint8_t>(i % 3 == 0 ? 1 : 2));
    s.z.push_back(static_cast<std::uint8_t>(i % 2));
  }
  Engine e(s, 2.0);
  CHECK(e.cond_mean(1, 0.0, 0, 1.0) == doctest::Approx(7.25).epsilon(1e-12));

  // Benchmark DGP, cell (d=1, x=0, z=0): truth gamma_1 + rho E[V | V < k1].
  Sample big = benchmark_sample(200000, 5);
  Engine eb(big);
  auto bw = kreg::Bandwidths::from_sample(big);
  dgp::OrderedChoiceSpec spec;
  double truth = dgp::true_cond_mean(spec, 1, 0.0, 0);
  CHECK(std::abs(eb.cond_mean(1, 0.0, 0, bw.h_m) - truth) < 0.1);
}

TEST_CASE("linear response recovered with shrinking bias") {
  // Exogenous disturbance makes E[Y | d, x, z] exactly linear in x.
  dgp::OrderedChoiceSpec spec;
  spec.rho = 0.0;
  num::RngStream rng(6);
  Sample s = dgp::simulate(spec, 400000, rng);
  Engine e(s);
  double truth = spec.gammas[1] * (0.5 + 1.0);
  double err_wide = std::abs(e.cond_mean(2, 0.5, 0, 0.8) - truth);
  double err_narrow = std::abs(e.cond_mean(2, 0.5, 0, 0.4) - truth);
  CHECK(err_narrow < err_wide + 0.01);
  CHECK(err_narrow < 0.05);
}

TEST_CASE("smoothed conditional CDF: support edges, monotonicity, median") {
  Sample s = benchmark_sample(20000, 7);
  Engine e(s);
  auto bw = kreg::Bandwidths::from_sample(s);
  auto cell = e.cell_cdf(2, 0.0, 0, bw.h_g);
  double y_lo = cell.y_min(), y_hi = cell.y_max();
  CHECK(cell(y_lo - 2.0 * bw.h_0, bw.h_0) == 0.0);
  CHECK(cell(y_hi + 2.0 * bw.h_0, bw.h_0) == 1.0);

  double prev = -1.0;
  for (int i = 0; i <= 200; ++i) {
    double y = y_lo - 0.5 + (y_hi - y_lo + 1.0) * i / 200.0;
    double f = cell(y, bw.h_0);
    CHECK(f >= prev - 1e-14);
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    prev = f;
  }

  // Median recovery against the weighted-empirical-CDF oracle on the same
  // cell: invert the smoothed CDF at 1/2 and compare with the weighted
  // median computed directly from the window rows.
  double lo = y_lo, hi = y_hi;
  for (int it = 0; it < 80; ++it) {
    double mid = 0.5 * (lo + hi);
    (cell(mid, bw.h_0) < 0.5 ? lo : hi) = mid;
  }
  double med_smoothed = 0.5 * (lo + hi);
  std::vector<std::pair<double, double>> rows;  // (y, w) oracle recompute
  for (std::size_t i = 0; i < s.n(); ++i) {
    if (s.d[i] == 2 && s.z[i] == 0 && std::abs(s.x[i]) < bw.h_g) {
      rows.emplace_back(s.y[i], kreg::kernel(s.x[i] / bw.h_g));
    }
  }
  std::sort(rows.begin(), rows.end());
  double wtot = 0.0;
  for (auto& r : rows) wtot += r.second;
  double acc = 0.0, med_emp = rows.back().first;
  for (auto& r : rows) {
    acc += r.second;
    if (acc >= 0.5 * wtot) {
      med_emp = r.first;
      break;
    }
  }
  CHECK(std::abs(med_smoothed - med_emp) < 2.0 * (bw.h_0 + bw.h_g));
}

TEST_CASE("insufficient local data raises typed errors") {
  Sample s = benchmark_sample(500, 8);
  Engine e(s);
  CHECK_THROWS_AS(e.propensity(2.9, 0, 0.01), InsufficientLocalData);
  CHECK_THROWS_AS(e.cond_mean(1, 2.9, 0, 0.01), InsufficientLocalData);
  CHECK_THROWS_AS(e.smoothed_cond_cdf(0.0, 1, 2.9, 0, 0.01, 0.001),
                  InsufficientLocalData);
}

TEST_CASE("NW outputs are invariant under row permutation") {
  Sample s = benchmark_sample(5000, 9);
  auto bw = kreg::Bandwidths::from_sample(s);
  Engine e1(s);

  Sample shuffled = s;
  std::mt19937 g(123);
  std::vector<std::size_t> idx(s.n());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), g);
  for (std::size_t i = 0; i < s.n(); ++i) {
    shuffled.y[i] = s.y[idx[i]];
    shuffled.x[i] = s.x[idx[i]];
    shuffled.d[i] = s.d[idx[i]];
    shuffled.z[i] = s.z[idx[i]];
  }
  Engine e2(shuffled);

  for (double x : {-1.0, 0.0, 0.7}) {
    for (int z = 0; z <= 1; ++z) {
      auto p1 = e1.propensity(x, z, bw.h_x);
      auto p2 = e2.propensity(x, z, bw.h_x);
      for (std::size_t d = 0; d < p1.size(); ++d) CHECK(p1[d] == p2[d]);
      CHECK(e1.cond_mean(2, x, z, bw.h_m) == e2.cond_mean(2, x, z, bw.h_m));
      CHECK(e1.smoothed_cond_cdf(2.5, 2, x, z, bw.h_g, bw.h_0) ==
            e2.smoothed_cond_cdf(2.5, 2, x, z, bw.h_g, bw.h_0));
    }
  }
}

TEST_CASE("estimation error shrinks as n grows with h ~ n^{-1/4}") {
  dgp::OrderedChoiceSpec spec;
  auto truth = dgp::true_propensity(spec, 0.3, 0);
  std::vector<double> med_err;
  for (std::size_t n : {1000ul, 4000ul, 16000ul}) {
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      num::RngStream rng(1000 + seed);
      Sample s = dgp::simulate(spec, n, rng);
      Engine e(s);
      auto bw = kreg::Bandwidths::from_sample(s);
      auto p = e.propensity(0.3, 0, bw.h_x);
      errs.push_back(std::abs(p[0] - truth[0]));
    }
    std::sort(errs.begin(), errs.end());
    med_err.push_back(errs[10]);
  }
  CHECK(med_err[1] < med_err[0]);
  CHECK(med_err[2] < med_err[1]);
}

TEST_CASE("engine honors the kernel backend in use") {
  Sample s = benchmark_sample(4000, 10);
  auto bw = kreg::Bandwidths::from_sample(s);
  kern::Backend saved = kern::active_backend();
  kern::set_backend(kern::Backend::scalar);
  Engine es(s);
  auto ps = es.propensity(0.2, 1, bw.h_x);
  kern::set_backend(saved);
  Engine ea(s);
  auto pa = ea.propensity(0.2, 1, bw.h_x);
  for (std::size_t d = 0; d < ps.size(); ++d) {
    CHECK(ps[d] == doctest::Approx(pa[d]).epsilon(1e-12));
  }
}
