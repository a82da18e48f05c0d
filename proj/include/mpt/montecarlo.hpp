#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mpt/dgp.hpp"
#include "mpt/kreg.hpp"
#include "mpt/matching.hpp"
#include "mpt/nonseparable.hpp"
#include "mpt/separable.hpp"

namespace mpt::mc {

struct Stages {
  bool matching = true;
  bool separable = true;
  bool nonseparable = false;
};

struct McConfig {
  dgp::OrderedChoiceSpec dgp;
  std::size_t n = 2000;
  int reps = 500;
  double x0 = 0.0;
  std::uint64_t seed = 1;
  kreg::BandwidthConfig bandwidth;
  int grid_size = 500;
  Stages stages;
  double min_effective_count = 2.0;
  nonseparable::SieveConfig sieve;
  double nsp_u0 = 0.5;
  int workers = 0;  // 0: hardware concurrency

  void validate() const;
};

struct TargetRow {
  std::string name;
  double truth = 0.0;
  double average = 0.0;
  double bias_sq = 0.0;
  double variance = 0.0;
  double mse = 0.0;
  double coverage90 = 0.0;
  double coverage95 = 0.0;
  double coverage99 = 0.0;
};

struct JRow {
  std::string name;
  double coverage90 = 0.0;
  double coverage95 = 0.0;
  double coverage99 = 0.0;
};

struct McReport {
  std::vector<TargetRow> targets;
  std::vector<JRow> jtests;
  int reps_requested = 0;
  int failures = 0;  // replications aborted by typed estimation errors
  std::size_t n = 0;
  double x0 = 0.0;
};

// Runs `reps` independent replications with per-replication streams seeded
// seed + r, aggregates moments over the successful ones in replication
// order, and reports CI and J-test coverage against the DGP truths.
McReport run_mc(const McConfig& cfg);

// Deterministic table renderings. The CSV round-trips through
// mc_report_from_csv.
std::string emit_table_markdown(const McReport& report);
std::string emit_table_csv(const McReport& report);
McReport mc_report_from_csv(const std::string& csv);

}  // namespace mpt::mc
