#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mpt/dgp.hpp"
#include "mpt/matching.hpp"
#include "mpt/numerics.hpp"

using namespace mpt;
using matching::FunctionPropensities;
using matching::MatchingConfig;
using matching::SamplePropensities;
using matching::SlackMode;
using num::SmallMatrix;

namespace {

FunctionPropensities oracle_source(const dgp::OrderedChoiceSpec& spec) {
  return FunctionPropensities(
      [spec](double x, int z) {
        auto p = dgp::true_propensity(spec, x, z);
        return std::vector<double>{p[0], p[1], p[2]};
      },
      3);
}

kreg::Sample benchmark_sample(std::size_t n, std::uint64_t seed) {
  dgp::OrderedChoiceSpec spec;
  num::RngStream rng(seed);
  return dgp::simulate(spec, n, rng);
}

double hausdorff_to_point(const std::vector<matching::GridPair>& set, double t1,
                          double t2) {
  double worst = 0.0;
  for (const auto& p : set) {
    double d = std::hypot(p.x1 - t1, p.x2 - t2);
    worst = std::max(worst, d);
  }
  return worst;
}

}  // namespace

TEST_CASE("population objective vanishes exactly at the true pair") {
  dgp::OrderedChoiceSpec spec;
  auto src = oracle_source(spec);
  SmallMatrix w = SmallMatrix::identity(4);
  CHECK(matching::qx_objective(src, 0.0, -2.0, 2.0, w) < 1e-28);
  // Inert candidate (x1 = x2 = x0) is strictly positive when alpha != 0.
  CHECK(matching::qx_objective(src, 0.0, 0.0, 0.0, w) > 1e-4);
  // Quadratic-form homogeneity in W.
  double q = matching::qx_objective(src, 0.0, -1.0, 1.5, w);
  CHECK(matching::qx_objective(src, 0.0, -1.0, 1.5, w.scaled(4.0)) ==
        doctest::Approx(4.0 * q).epsilon(1e-13));
}

TEST_CASE("oracle grid argmin hits the nodes nearest (-2, 2) exactly") {
  dgp::OrderedChoiceSpec spec;
  auto src = oracle_source(spec);
  kreg::Interval s0{-2.62, 2.62};
  MatchingConfig cfg;
  cfg.x0 = 0.0;
  cfg.grid_size = 500;
  auto set = matching::estimate_matching_set(src, s0, cfg,
                                             SmallMatrix::identity(4), 0.0);
  REQUIRE(set.pairs.size() == 1);
  auto nearest = [&set](double target) {
    double best = set.grid[0];
    for (double g : set.grid) {
      if (std::abs(g - target) < std::abs(best - target)) best = g;
    }
    return best;
  };
  CHECK(set.pairs[0].x1 == nearest(-2.0));
  CHECK(set.pairs[0].x2 == nearest(2.0));
}

TEST_CASE("set estimate contains the point solution and grows with a_n") {
  kreg::Sample s = benchmark_sample(2000, 21);
  kreg::Engine e(s, 2.0);
  auto bw = kreg::Bandwidths::from_sample(s);
  SamplePropensities src(e, bw.h_x);
  kreg::Interval s0 = kreg::trimmed_support(s, bw.h_x);
  SmallMatrix w = SmallMatrix::identity(4);

  MatchingConfig pt;
  pt.x0 = 0.0;
  pt.slack_mode = SlackMode::point;
  auto point = matching::estimate_matching_set(src, s0, pt, w, 0.0);

  MatchingConfig st = pt;
  st.slack_mode = SlackMode::set;
  double a_n = matching::slack_a_n(s.n(), bw.h_x);
  auto small_set = matching::estimate_matching_set(src, s0, st, w, a_n);
  auto big_set = matching::estimate_matching_set(src, s0, st, w, 2.0 * a_n);

  bool contains = false;
  for (const auto& p : small_set.pairs) {
    if (p.x1 == point.pairs[0].x1 && p.x2 == point.pairs[0].x2) contains = true;
  }
  CHECK(contains);
  CHECK(big_set.pairs.size() >= small_set.pairs.size());
  for (const auto& p : small_set.pairs) {
    bool found = false;
    for (const auto& q : big_set.pairs) {
      if (q.i1 == p.i1 && q.i2 == p.i2) found = true;
    }
    CHECK(found);
  }
}

TEST_CASE("weight rescaling leaves the grid argmin unchanged") {
  kreg::Sample s = benchmark_sample(2000, 22);
  kreg::Engine e(s, 2.0);
  auto bw = kreg::Bandwidths::from_sample(s);
  SamplePropensities src(e, bw.h_x);
  kreg::Interval s0 = kreg::trimmed_support(s, bw.h_x);
  MatchingConfig cfg;
  cfg.x0 = 0.0;
  SmallMatrix w = SmallMatrix::identity(4);
  auto a = matching::estimate_matching_set(src, s0, cfg, w, 0.0);
  auto b = matching::estimate_matching_set(src, s0, cfg, w.scaled(2.0), 0.0);
  CHECK(a.pairs[0].x1 == b.pairs[0].x1);
  CHECK(a.pairs[0].x2 == b.pairs[0].x2);
}

TEST_CASE("block-diagonal weighting makes the argmin exactly separable") {
  kreg::Sample s = benchmark_sample(3000, 23);
  kreg::Engine e(s, 2.0);
  auto bw = kreg::Bandwidths::from_sample(s);
  SamplePropensities src(e, bw.h_x);
  kreg::Interval s0 = kreg::trimmed_support(s, bw.h_x);
  MatchingConfig cfg;
  cfg.x0 = 0.0;
  cfg.grid_size = 301;
  SmallMatrix w = SmallMatrix::identity(4);
  auto joint = matching::estimate_matching_set(src, s0, cfg, w, 0.0);

  // Marginal argmins: scan each coordinate with the other held fixed; the
  // fixed block only adds a constant under block-diagonal W.
  double best1 = 0.0, best2 = 0.0, q1 = 1e300, q2 = 1e300;
  for (double g : joint.grid) {
    double qa = matching::qx_objective(src, 0.0, g, joint.grid[0], w);
    double qb = matching::qx_objective(src, 0.0, joint.grid[0], g, w);
    if (qa < q1) {
      q1 = qa;
      best1 = g;
    }
    if (qb < q2) {
      q2 = qb;
      best2 = g;
    }
  }
  CHECK(joint.pairs[0].x1 == best1);
  CHECK(joint.pairs[0].x2 == best2);
}

TEST_CASE("benchmark samples put the estimates near (-2, 2)") {
  // The moment functions carry kernel-level noise, so the matching points
  // have standard errors near 0.2 at n = 3000 even at the bias-variance
  // sweet spot (c_x ~ 3.5). The unit check uses a 3-sigma band; the tight
  // accuracy claim is exercised by the acceptance suite.
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    kreg::Sample s = benchmark_sample(3000, 100 + seed);
    kreg::BandwidthConfig bc;
    bc.c_x = 3.5;
    auto bw = kreg::Bandwidths::from_sample(s, bc);
    MatchingConfig cfg;
    cfg.x0 = 0.0;
    auto fit = matching::two_step_matching(s, cfg, bw.h_x, 2.0);
    if (std::abs(fit.xm1_hat + 2.0) < 0.6 && std::abs(fit.xm2_hat - 2.0) < 0.6) {
      ++hits;
    }
    CHECK(fit.se1 > 0.0);
    CHECK(fit.se2 > 0.0);
    CHECK(fit.j.j_x >= 0.0);
    CHECK(fit.j.j_x1 >= 0.0);
    CHECK(fit.j.j_x2 >= 0.0);
    // Block diagonality makes the joint statistic the sum of the blocks.
    CHECK(fit.j.j_x ==
          doctest::Approx(fit.j.j_x1 + fit.j.j_x2).epsilon(1e-9));
  }
  CHECK(hits >= 9);
}

TEST_CASE("refinement: single cluster, double-root oracle, improvement") {
  dgp::OrderedChoiceSpec spec;
  auto src = oracle_source(spec);
  kreg::Interval s0{-2.62, 2.62};
  MatchingConfig cfg;
  cfg.x0 = 0.0;
  cfg.slack_mode = SlackMode::set;
  SmallMatrix w = SmallMatrix::identity(4);
  double a_n = 0.02;
  auto set = matching::estimate_matching_set(src, s0, cfg, w, a_n);
  auto refined = matching::refine_isolated(src, set, cfg, w, 0.6, s0, 1.73);
  REQUIRE(refined.size() == 1);
  CHECK(std::abs(refined[0].x1 + 2.0) < 1e-4);
  CHECK(std::abs(refined[0].x2 - 2.0) < 1e-4);
  CHECK(refined[0].q <= set.q_min + 1e-18);

  // Constructed multi-root selection: a hump-shaped index t(x) = 1 - x^2
  // gives two roots for the block-1 matching level and none for block 2.
  FunctionPropensities multi(
      [](double x, int z) {
        double index = 1.0 - x * x + 0.8 * z;
        double p1 = num::std_normal_cdf(-0.7 + index);
        double p3 = 1.0 - num::std_normal_cdf(0.1 + index);
        return std::vector<double>{p1, 1.0 - p1 - p3, p3};
      },
      3);
  MatchingConfig mcfg;
  mcfg.x0 = 0.0;
  mcfg.slack_mode = SlackMode::set;
  kreg::Interval wide{-2.5, 2.5};
  auto mset = matching::estimate_matching_set(multi, wide, mcfg, w, 0.01);
  auto mref = matching::refine_isolated(multi, mset, mcfg, w, 0.25, wide, 1.5);
  // Two well-separated block-1 roots at +-sqrt(0.8) paired with the unique
  // block-2 argmin: exactly two refined pairs.
  REQUIRE(mref.size() == 2);
  std::vector<double> roots{mref[0].x1, mref[1].x1};
  std::sort(roots.begin(), roots.end());
  CHECK(roots[0] == doctest::Approx(-std::sqrt(0.8)).epsilon(0.02));
  CHECK(roots[1] == doctest::Approx(std::sqrt(0.8)).epsilon(0.02));
}

TEST_CASE("set-estimate Hausdorff distance to the truth shrinks with n") {
  std::vector<double> med;
  for (std::size_t n : {1000ul, 2000ul, 4000ul}) {
    std::vector<double> dist;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      kreg::Sample s = benchmark_sample(n, 300 + seed);
      kreg::Engine e(s, 2.0);
      auto bw = kreg::Bandwidths::from_sample(s);
      SamplePropensities src(e, bw.h_x);
      kreg::Interval s0 = kreg::trimmed_support(s, bw.h_x);
      MatchingConfig cfg;
      cfg.x0 = 0.0;
      cfg.slack_mode = SlackMode::set;
      double a_n = matching::slack_a_n(n, bw.h_x);
      auto set = matching::estimate_matching_set(src, s0, cfg,
                                                 SmallMatrix::identity(4), a_n);
      dist.push_back(hausdorff_to_point(set.pairs, -2.0, 2.0));
    }
    std::sort(dist.begin(), dist.end());
    med.push_back(0.5 * (dist[9] + dist[10]));
  }
  CHECK(med[1] < med[0]);
  CHECK(med[2] < med[1]);
}

TEST_CASE("J test rejects a constructed matching violation") {
  // Thresholds shifted by different instrument effects: matching p1 and p2
  // simultaneously is impossible, so the overidentifying restriction fails.
  auto simulate_violation = [](std::size_t n, std::uint64_t seed) {
    kreg::Sample s;
    s.k_d = 3;
    s.k_z = 2;
    num::RngStream rng(seed);
    const double rho = 0.5, rc = std::sqrt(1.0 - rho * rho);
    for (std::size_t i = 0; i < n; ++i) {
      double x = rng.uniform(-3.0, 3.0);
      int z = rng.bernoulli(0.5) ? 1 : 0;
      double e1 = rng.normal(), e2 = rng.normal();
      double u = e1, v = rho * e1 + rc * e2;
      double t1 = -0.7 + 0.4 * x + 0.8 * z;
      double t2 = 0.1 + 0.4 * x + 0.2 * z;  // different z effect
      int d = v < t1 ? 1 : (v >= t2 ? 3 : 2);
      s.x.push_back(x);
      s.z.push_back(static_cast<std::uint8_t>(z));
      s.d.push_back(static_cast<std::uint8_t>(d));
      s.y.push_back(1.0 * d * (x + 1.0) + u);
    }
    return s;
  };
  int reject = 0;
  const int reps = 30;
  for (int r = 0; r < reps; ++r) {
    kreg::Sample s = simulate_violation(5000, 900 + static_cast<std::uint64_t>(r));
    auto bw = kreg::Bandwidths::from_sample(s);
    MatchingConfig cfg;
    cfg.x0 = 0.0;
    auto fit = matching::two_step_matching(s, cfg, bw.h_x, 2.0);
    if (fit.j.j_x_p < 0.05) ++reject;
  }
  CHECK(reject > reps / 2);
}
