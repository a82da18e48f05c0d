#include "mpt/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

namespace mpt::mc {

void McConfig::validate() const {
  if (reps < 1) throw ConfigError("McConfig: reps >= 1 required");
  if (n < 200) throw ConfigError("McConfig: n >= 200 required");
  dgp.validate();
  if (stages.nonseparable && !stages.matching) {
    throw ConfigError("McConfig: the nonseparable stage needs matching points");
  }
  if (stages.separable && !stages.matching) {
    throw ConfigError("McConfig: the separable stage needs matching points");
  }
}

namespace {

struct RepResult {
  bool ok = false;
  double xm1 = 0.0, xm2 = 0.0, se_xm1 = 0.0, se_xm2 = 0.0;
  double j_x = 0.0, j_x1 = 0.0, j_x2 = 0.0;
  std::array<double, 3> m_hat{};
  std::array<double, 3> m_se{};
  double j_sp = 0.0;
  std::array<double, 3> g_u0{};
  std::array<double, 3> g_se{};
  double j_nsp = 0.0;
};

RepResult run_rep(const McConfig& cfg, int r) {
  RepResult res;
  num::RngStream rng(cfg.seed + static_cast<std::uint64_t>(r));
  kreg::Sample s = dgp::simulate(cfg.dgp, cfg.n, rng);
  kreg::Bandwidths bw = kreg::Bandwidths::from_sample(s, cfg.bandwidth);
  kreg::Engine e(s, cfg.min_effective_count);

  matching::MatchingConfig mcfg;
  mcfg.x0 = cfg.x0;
  mcfg.grid_size = cfg.grid_size;
  matching::MatchingFit mfit = matching::two_step_matching(e, s, mcfg, bw.h_x);
  res.xm1 = mfit.xm1_hat;
  res.xm2 = mfit.xm2_hat;
  res.se_xm1 = mfit.se1;
  res.se_xm2 = mfit.se2;
  res.j_x = mfit.j.j_x;
  res.j_x1 = mfit.j.j_x1;
  res.j_x2 = mfit.j.j_x2;

  if (cfg.stages.separable) {
    auto pts = separable::benchmark_points(cfg.x0, mfit.xm1_hat, mfit.xm2_hat);
    separable::SampleMoments src(e, bw.h_x, bw.h_m);
    auto fit = separable::fit_separable(src, cfg.x0, pts, s.n(), bw.h_m, true);
    for (int d = 0; d < 3; ++d) {
      res.m_hat[static_cast<std::size_t>(d)] = fit.m_hat[static_cast<std::size_t>(d)];
      res.m_se[static_cast<std::size_t>(d)] = fit.se[static_cast<std::size_t>(d)];
    }
    res.j_sp = fit.j_sp;
  }

  if (cfg.stages.nonseparable) {
    auto fit = nonseparable::fit_nonseparable(e, s, cfg.x0, mfit.xm1_hat,
                                              mfit.xm2_hat, bw.h_x, cfg.sieve,
                                              bw.h_g, bw.h_0);
    nonseparable::SamplePsi psi(e, cfg.x0, mfit.xm1_hat, mfit.xm2_hat, bw.h_x,
                                bw.h_g, bw.h_0, cfg.sieve);
    nonseparable::pointwise_inference(fit, psi, cfg.sieve, cfg.nsp_u0);
    for (int d = 0; d < 3; ++d) {
      res.g_u0[static_cast<std::size_t>(d)] = fit.g_u0[static_cast<std::size_t>(d)];
      res.g_se[static_cast<std::size_t>(d)] = fit.se_u0[static_cast<std::size_t>(d)];
    }
    res.j_nsp = fit.j_nsp;
  }
  res.ok = true;
  return res;
}

struct Agg {
  std::vector<double> values, ses;
  double truth;
  std::string name;
};

TargetRow summarize(const Agg& a, double z90, double z95, double z99) {
  TargetRow row;
  row.name = a.name;
  row.truth = a.truth;
  const double r = static_cast<double>(a.values.size());
  double mean = 0.0;
  for (double v : a.values) mean += v;
  mean /= r;
  double var = 0.0;
  for (double v : a.values) var += (v - mean) * (v - mean);
  var /= r;  // population-style: MSE = bias^2 + variance exactly
  row.average = mean;
  row.bias_sq = (mean - a.truth) * (mean - a.truth);
  row.variance = var;
  row.mse = row.bias_sq + row.variance;
  int c90 = 0, c95 = 0, c99 = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    double err = std::abs(a.values[i] - a.truth);
    if (err <= z90 * a.ses[i]) ++c90;
    if (err <= z95 * a.ses[i]) ++c95;
    if (err <= z99 * a.ses[i]) ++c99;
  }
  row.coverage90 = c90 / r;
  row.coverage95 = c95 / r;
  row.coverage99 = c99 / r;
  return row;
}

}  // namespace

McReport run_mc(const McConfig& cfg) {
  cfg.validate();

  std::vector<RepResult> results(static_cast<std::size_t>(cfg.reps));
  int workers = cfg.workers > 0
                    ? cfg.workers
                    : static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  workers = std::min<int>(workers, cfg.reps);

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      int r = next.fetch_add(1);
      if (r >= cfg.reps) return;
      try {
        results[static_cast<std::size_t>(r)] = run_rep(cfg, r);
      } catch (const Error&) {
        results[static_cast<std::size_t>(r)].ok = false;
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  McReport report;
  report.reps_requested = cfg.reps;
  report.n = cfg.n;
  report.x0 = cfg.x0;

  const double z90 = num::std_normal_quantile(0.95);
  const double z95 = num::std_normal_quantile(0.975);
  const double z99 = num::std_normal_quantile(0.995);
  const double jc90_2 = num::chi_square_critical(2, 0.10);
  const double jc95_2 = num::chi_square_critical(2, 0.05);
  const double jc99_2 = num::chi_square_critical(2, 0.01);
  const double jc90_1 = num::chi_square_critical(1, 0.10);
  const double jc95_1 = num::chi_square_critical(1, 0.05);
  const double jc99_1 = num::chi_square_critical(1, 0.01);

  auto truth_mp = dgp::true_matching_points(cfg.dgp, cfg.x0);
  auto truth_m = dgp::true_m_separable(cfg.dgp, cfg.x0);

  std::vector<Agg> aggs;
  aggs.push_back({{}, {}, truth_mp.x_m1, "xm1"});
  aggs.push_back({{}, {}, truth_mp.x_m2, "xm2"});
  if (cfg.stages.separable) {
    for (int d = 0; d < 3; ++d) {
      aggs.push_back({{},
                      {},
                      truth_m[static_cast<std::size_t>(d)],
                      "m" + std::to_string(d + 1)});
    }
  }
  if (cfg.stages.nonseparable) {
    auto truth_g = dgp::true_g_nonseparable(cfg.dgp, cfg.x0, cfg.nsp_u0);
    for (int d = 0; d < 3; ++d) {
      aggs.push_back({{},
                      {},
                      truth_g[static_cast<std::size_t>(d)],
                      "g" + std::to_string(d + 1)});
    }
  }

  std::vector<double> jx, jx1, jx2, jsp, jnsp;
  for (int r = 0; r < cfg.reps; ++r) {
    const RepResult& res = results[static_cast<std::size_t>(r)];
    if (!res.ok) {
      ++report.failures;
      continue;
    }
    std::size_t k = 0;
    aggs[k].values.push_back(res.xm1);
    aggs[k].ses.push_back(res.se_xm1);
    ++k;
    aggs[k].values.push_back(res.xm2);
    aggs[k].ses.push_back(res.se_xm2);
    ++k;
    if (cfg.stages.separable) {
      for (int d = 0; d < 3; ++d, ++k) {
        aggs[k].values.push_back(res.m_hat[static_cast<std::size_t>(d)]);
        aggs[k].ses.push_back(res.m_se[static_cast<std::size_t>(d)]);
      }
      jsp.push_back(res.j_sp);
    }
    if (cfg.stages.nonseparable) {
      for (int d = 0; d < 3; ++d, ++k) {
        aggs[k].values.push_back(res.g_u0[static_cast<std::size_t>(d)]);
        aggs[k].ses.push_back(res.g_se[static_cast<std::size_t>(d)]);
      }
      jnsp.push_back(res.j_nsp);
    }
    jx.push_back(res.j_x);
    jx1.push_back(res.j_x1);
    jx2.push_back(res.j_x2);
  }
  if (report.failures == cfg.reps) {
    throw ConfigError("run_mc: every replication failed");
  }

  for (const Agg& a : aggs) {
    report.targets.push_back(summarize(a, z90, z95, z99));
  }

  auto jrow = [](const std::string& name, const std::vector<double>& stats,
                 double c90, double c95, double c99) {
    JRow row;
    row.name = name;
    double r = static_cast<double>(stats.size());
    int a = 0, b = 0, c = 0;
    for (double s : stats) {
      if (s <= c90) ++a;
      if (s <= c95) ++b;
      if (s <= c99) ++c;
    }
    row.coverage90 = a / r;
    row.coverage95 = b / r;
    row.coverage99 = c / r;
    return row;
  };
  report.jtests.push_back(jrow("J_x", jx, jc90_2, jc95_2, jc99_2));
  report.jtests.push_back(jrow("J_x1", jx1, jc90_1, jc95_1, jc99_1));
  report.jtests.push_back(jrow("J_x2", jx2, jc90_1, jc95_1, jc99_1));
  if (cfg.stages.separable) {
    report.jtests.push_back(jrow("J_SP", jsp, jc90_1, jc95_1, jc99_1));
  }
  if (cfg.stages.nonseparable) {
    report.jtests.push_back(jrow("J_NSP", jnsp, jc90_1, jc95_1, jc99_1));
  }
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::string emit_table_markdown(const McReport& report) {
  std::ostringstream os;
  os << "| target | truth | average | bias^2 | variance | MSE | 90% | 95% | 99% |\n";
  os << "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& t : report.targets) {
    os << "| " << t.name << " | " << fmt(t.truth) << " | " << fmt(t.average)
       << " | " << fmt(t.bias_sq) << " | " << fmt(t.variance) << " | "
       << fmt(t.mse) << " | " << fmt(100.0 * t.coverage90) << "% | "
       << fmt(100.0 * t.coverage95) << "% | " << fmt(100.0 * t.coverage99)
       << "% |\n";
  }
  for (const auto& j : report.jtests) {
    os << "| " << j.name << " |  |  |  |  |  | " << fmt(100.0 * j.coverage90)
       << "% | " << fmt(100.0 * j.coverage95) << "% | "
       << fmt(100.0 * j.coverage99) << "% |\n";
  }
  os << "\nn = " << report.n << ", replications = " << report.reps_requested;
  if (report.failures > 0) {
    os << ", failed replications = " << report.failures;
  }
  os << "\n";
  return os.str();
}

std::string emit_table_csv(const McReport& report) {
  std::ostringstream os;
  os << "kind,name,truth,average,bias_sq,variance,mse,coverage90,coverage95,"
        "coverage99\n";
  char buf[340];
  for (const auto& t : report.targets) {
    std::snprintf(buf, sizeof(buf),
                  "target,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  t.name.c_str(), t.truth, t.average, t.bias_sq, t.variance,
                  t.mse, t.coverage90, t.coverage95, t.coverage99);
    os << buf;
  }
  for (const auto& j : report.jtests) {
    std::snprintf(buf, sizeof(buf), "jtest,%s,,,,,,%.17g,%.17g,%.17g\n",
                  j.name.c_str(), j.coverage90, j.coverage95, j.coverage99);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "meta,run,%zu,%d,%d,,,,,\n", report.n,
                report.reps_requested, report.failures);
  os << buf;
  return os.str();
}

McReport mc_report_from_csv(const std::string& csv) {
  McReport report;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    cells.resize(10);
    if (cells[0] == "target") {
      TargetRow t;
      t.name = cells[1];
      t.truth = std::stod(cells[2]);
      t.average = std::stod(cells[3]);
      t.bias_sq = std::stod(cells[4]);
      t.variance = std::stod(cells[5]);
      t.mse = std::stod(cells[6]);
      t.coverage90 = std::stod(cells[7]);
      t.coverage95 = std::stod(cells[8]);
      t.coverage99 = std::stod(cells[9]);
      report.targets.push_back(t);
    } else if (cells[0] == "jtest") {
      JRow j;
      j.name = cells[1];
      j.coverage90 = std::stod(cells[7]);
      j.coverage95 = std::stod(cells[8]);
      j.coverage99 = std::stod(cells[9]);
      report.jtests.push_back(j);
    } else if (cells[0] == "meta") {
      report.n = static_cast<std::size_t>(std::stoll(cells[2]));
      report.reps_requested = std::stoi(cells[3]);
      report.failures = std::stoi(cells[4]);
    }
  }
  return report;
}

}  // namespace mpt::mc
