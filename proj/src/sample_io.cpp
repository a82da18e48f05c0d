#include "mpt/sample_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mpt::io {

using nlohmann::json;

namespace {

double parse_number(const std::string& cell, std::size_t row,
                    const char* colname) {
  try {
    std::size_t pos = 0;
    double v = std::stod(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument(cell);
    if (!std::isfinite(v)) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw SchemaError("load_csv: non-numeric cell at row " +
                      std::to_string(row) + ", column " + colname);
  }
}

int parse_integer(const std::string& cell, std::size_t row,
                  const char* colname) {
  double v = parse_number(cell, row, colname);
  double r = std::round(v);
  if (std::abs(v - r) > 1e-9) {
    throw SchemaError("load_csv: non-integer value at row " +
                      std::to_string(row) + ", column " + colname);
  }
  return static_cast<int>(r);
}

}  // namespace

kreg::Sample load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("load_csv: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "y,d,x,z") {
    throw SchemaError("load_csv: header must be exactly 'y,d,x,z', got '" +
                      line + "'");
  }
  kreg::Sample s;
  std::size_t row = 1;
  int max_d = 0, max_z = 0;
  std::vector<bool> seen_d;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) {
      throw SchemaError("load_csv: expected 4 columns at row " +
                        std::to_string(row) + ", got " +
                        std::to_string(cells.size()));
    }
    double y = parse_number(cells[0], row, "y");
    int d = parse_integer(cells[1], row, "d");
    double x = parse_number(cells[2], row, "x");
    int z = parse_integer(cells[3], row, "z");
    if (d < 1) {
      throw SchemaError("load_csv: d must be a positive integer at row " +
                        std::to_string(row) + ", column d");
    }
    if (z < 0) {
      throw SchemaError("load_csv: z must be a nonnegative integer at row " +
                        std::to_string(row) + ", column z");
    }
    if (d > 8) throw SchemaError("load_csv: more than 8 treatment levels");
    if (z > 3) throw SchemaError("load_csv: more than 4 instrument levels");
    s.y.push_back(y);
    s.d.push_back(static_cast<std::uint8_t>(d));
    s.x.push_back(x);
    s.z.push_back(static_cast<std::uint8_t>(z));
    max_d = std::max(max_d, d);
    max_z = std::max(max_z, z);
    if (static_cast<std::size_t>(d) > seen_d.size()) seen_d.resize(static_cast<std::size_t>(d));
    seen_d[static_cast<std::size_t>(d - 1)] = true;
  }
  if (s.y.empty()) throw SchemaError("load_csv: no data rows in " + path);
  for (int d = 0; d < max_d; ++d) {
    if (!seen_d[static_cast<std::size_t>(d)]) {
      throw SchemaError("load_csv: d levels must be contiguous from 1; level " +
                        std::to_string(d + 1) + " is missing");
    }
  }
  s.k_d = max_d;
  s.k_z = max_z + 1;
  s.validate();
  return s;
}

void save_csv(const kreg::Sample& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("save_csv: cannot open " + path);
  out << "y,d,x,z\n";
  char buf[96];
  for (std::size_t i = 0; i < s.n(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%d,%.17g,%d\n", s.y[i],
                  static_cast<int>(s.d[i]), s.x[i], static_cast<int>(s.z[i]));
    out << buf;
  }
}

dgp::OrderedChoiceSpec ordered_spec_from_json(const json& j) {
  dgp::OrderedChoiceSpec spec;
  try {
    if (j.contains("alpha")) spec.alpha = j.at("alpha").get<double>();
    if (j.contains("beta")) spec.beta = j.at("beta").get<double>();
    if (j.contains("kappa1")) spec.kappa1 = j.at("kappa1").get<double>();
    if (j.contains("kappa2")) spec.kappa2 = j.at("kappa2").get<double>();
    if (j.contains("gammas")) {
      auto g = j.at("gammas").get<std::vector<double>>();
      if (g.size() != 3) throw ConfigError("dgp: gammas must have 3 entries");
      spec.gammas = {g[0], g[1], g[2]};
    }
    if (j.contains("rho")) spec.rho = j.at("rho").get<double>();
    if (j.contains("x_low")) spec.x_low = j.at("x_low").get<double>();
    if (j.contains("x_high")) spec.x_high = j.at("x_high").get<double>();
    if (j.contains("z_prob")) spec.z_prob = j.at("z_prob").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dgp config: ") + e.what());
  }
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("dgp config: ") + e.what());
  }
  return spec;
}

dgp::TwoBinarySpec two_binary_spec_from_json(const json& j) {
  dgp::TwoBinarySpec spec;
  auto read_index = [&](const char* key, dgp::AffineIndex& idx) {
    if (!j.contains(key)) return;
    auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 3) throw ConfigError("dgp: index needs [intercept, b_x, b_z]");
    idx = {v[0], v[1], v[2]};
  };
  try {
    read_index("gamma1", spec.gamma1);
    read_index("gamma2", spec.gamma2);
    if (j.contains("v_corr")) spec.v_corr = j.at("v_corr").get<double>();
    if (j.contains("slopes")) {
      auto v = j.at("slopes").get<std::vector<double>>();
      if (v.size() != 4) throw ConfigError("dgp: slopes must have 4 entries");
      spec.slopes = {v[0], v[1], v[2], v[3]};
    }
    if (j.contains("x_low")) spec.x_low = j.at("x_low").get<double>();
    if (j.contains("x_high")) spec.x_high = j.at("x_high").get<double>();
    if (j.contains("z_prob")) spec.z_prob = j.at("z_prob").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dgp config: ") + e.what());
  }
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("dgp config: ") + e.what());
  }
  return spec;
}

kreg::BandwidthConfig bandwidth_from_json(const json& j) {
  kreg::BandwidthConfig bw;
  if (j.contains("c_x")) bw.c_x = j.at("c_x").get<double>();
  if (j.contains("c_m")) bw.c_m = j.at("c_m").get<double>();
  if (j.contains("c_g")) bw.c_g = j.at("c_g").get<double>();
  if (j.contains("c_0")) bw.c_0 = j.at("c_0").get<double>();
  return bw;
}

nonseparable::SieveConfig sieve_from_json(const json& j) {
  nonseparable::SieveConfig cfg;
  if (j.contains("j_nodes")) cfg.j_nodes = j.at("j_nodes").get<int>();
  if (j.contains("u0_lo")) cfg.u0_lo = j.at("u0_lo").get<double>();
  if (j.contains("u0_hi")) cfg.u0_hi = j.at("u0_hi").get<double>();
  if (j.contains("lambda")) cfg.lambda = j.at("lambda").get<double>();
  if (j.contains("max_sweeps")) cfg.max_sweeps = j.at("max_sweeps").get<int>();
  if (j.contains("optimal_weights")) {
    cfg.optimal_weights = j.at("optimal_weights").get<bool>();
  }
  if (cfg.j_nodes < 3) throw ConfigError("sieve: j_nodes >= 3 required");
  if (!(cfg.u0_lo > 0.0 && cfg.u0_hi < 1.0 && cfg.u0_lo < cfg.u0_hi)) {
    throw ConfigError("sieve: U0 must lie strictly inside (0,1)");
  }
  if (cfg.lambda < 0.0) throw ConfigError("sieve: lambda >= 0 required");
  return cfg;
}

mc::McConfig mc_config_from_json(const json& j) {
  mc::McConfig cfg;
  try {
    if (j.contains("dgp")) cfg.dgp = ordered_spec_from_json(j.at("dgp"));
    if (j.contains("n")) cfg.n = j.at("n").get<std::size_t>();
    if (j.contains("reps")) cfg.reps = j.at("reps").get<int>();
    if (j.contains("x0")) cfg.x0 = j.at("x0").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("bandwidth")) cfg.bandwidth = bandwidth_from_json(j.at("bandwidth"));
    if (j.contains("grid_size")) cfg.grid_size = j.at("grid_size").get<int>();
    if (j.contains("min_effective_count")) {
      cfg.min_effective_count = j.at("min_effective_count").get<double>();
    }
    if (j.contains("sieve")) cfg.sieve = sieve_from_json(j.at("sieve"));
    if (j.contains("nsp_u0")) cfg.nsp_u0 = j.at("nsp_u0").get<double>();
    if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
    if (j.contains("stages")) {
      auto names = j.at("stages").get<std::vector<std::string>>();
      cfg.stages = {false, false, false};
      for (const auto& s : names) {
        if (s == "matching") cfg.stages.matching = true;
        else if (s == "separable") cfg.stages.separable = true;
        else if (s == "nonseparable") cfg.stages.nonseparable = true;
        else throw ConfigError("mc config: unknown stage '" + s + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mc config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

json to_json(const matching::MatchingFit& fit) {
  json j;
  j["xm1_hat"] = fit.xm1_hat;
  j["xm2_hat"] = fit.xm2_hat;
  j["se"] = {fit.se1, fit.se2};
  j["delta_p_hat"] = fit.delta_p_hat;
  json sig = json::array();
  for (int r = 0; r < fit.sigma_x.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < fit.sigma_x.cols(); ++c) row.push_back(fit.sigma_x(r, c));
    sig.push_back(row);
  }
  j["sigma_x"] = sig;
  if (fit.j.df_joint >= 1) {
    j["j_x"] = {{"stat", fit.j.j_x}, {"p_value", fit.j.j_x_p}, {"df", fit.j.df_joint}};
    j["j_x1"] = {{"stat", fit.j.j_x1}, {"p_value", fit.j.j_x1_p}, {"df", fit.j.df_block}};
    j["j_x2"] = {{"stat", fit.j.j_x2}, {"p_value", fit.j.j_x2_p}, {"df", fit.j.df_block}};
  } else {
    j["j_x"] = nullptr;
    j["j_x1"] = nullptr;
    j["j_x2"] = nullptr;
  }
  if (!fit.set_estimate.empty()) {
    json set = json::array();
    for (const auto& p : fit.set_estimate) {
      set.push_back({{"x1", p.x1}, {"x2", p.x2}, {"q", p.q}});
    }
    j["set_estimate"] = set;
  }
  j["n"] = fit.n;
  j["h_x"] = fit.h_x;
  j["x0"] = fit.x0;
  return j;
}

json to_json(const separable::SeparableFit& fit) {
  json j;
  j["m_hat"] = fit.m_hat;
  j["se"] = fit.se;
  json cov = json::array();
  for (int r = 0; r < fit.cov.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < fit.cov.cols(); ++c) row.push_back(fit.cov(r, c));
    cov.push_back(row);
  }
  j["cov"] = cov;
  if (fit.j_df >= 1) {
    j["j_sp"] = {{"stat", fit.j_sp}, {"df", fit.j_df}};
    if (fit.j_sp_p >= 0.0) {
      j["j_sp"]["p_value"] = fit.j_sp_p;
    } else {
      j["j_sp"]["p_value"] = nullptr;
    }
  } else {
    j["j_sp"] = nullptr;
  }
  j["rank"] = {{"full_rank", fit.rank.full_rank},
               {"inequality_lhs", fit.rank.inequality_lhs},
               {"inequality_rhs", fit.rank.inequality_rhs},
               {"condition_number", fit.rank.condition_number}};
  json pts = json::array();
  for (const auto& p : fit.points) {
    json chain = json::array();
    for (const auto& l : p.chain) {
      chain.push_back({{"from_x", l.from_x},
                       {"from_z", l.from_z},
                       {"to_x", l.to_x},
                       {"to_z", l.to_z}});
    }
    pts.push_back({{"x", p.x}, {"z", p.z}, {"chain", chain}});
  }
  j["points"] = pts;
  j["n"] = fit.n;
  j["h_m"] = fit.h_m;
  j["x0"] = fit.x0;
  return j;
}

json to_json(const nonseparable::NonseparableFit& fit) {
  json j;
  j["u_nodes"] = fit.u_nodes;
  j["g_hat"] = fit.g_hat;
  j["objective"] = fit.objective;
  j["sweeps"] = fit.sweeps;
  j["converged"] = fit.converged;
  j["x0"] = fit.x0;
  j["xm1"] = fit.xm1;
  j["xm2"] = fit.xm2;
  j["h_g"] = fit.h_g;
  j["h_0"] = fit.h_0;
  j["n"] = fit.n;
  if (!fit.g_u0.empty()) {
    j["u0"] = fit.u0;
    j["g_u0"] = fit.g_u0;
    j["se_u0"] = fit.se_u0;
    j["j_nsp"] = {{"stat", fit.j_nsp}, {"p_value", fit.j_nsp_p}, {"df", 1}};
    j["constraint_active_at_u0"] = fit.constraint_active_at_u0;
  }
  return j;
}

json to_json(const mc::McReport& report) {
  json j;
  json targets = json::array();
  for (const auto& t : report.targets) {
    targets.push_back({{"name", t.name},
                       {"truth", t.truth},
                       {"average", t.average},
                       {"bias_sq", t.bias_sq},
                       {"variance", t.variance},
                       {"mse", t.mse},
                       {"coverage90", t.coverage90},
                       {"coverage95", t.coverage95},
                       {"coverage99", t.coverage99}});
  }
  j["targets"] = targets;
  json jt = json::array();
  for (const auto& t : report.jtests) {
    jt.push_back({{"name", t.name},
                  {"coverage90", t.coverage90},
                  {"coverage95", t.coverage95},
                  {"coverage99", t.coverage99}});
  }
  j["jtests"] = jt;
  j["reps"] = report.reps_requested;
  j["failures"] = report.failures;
  j["n"] = report.n;
  j["x0"] = report.x0;
  return j;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << text;
}

}  // namespace mpt::io
