#pragma once

#include <string>

#include <json.hpp>

#include "mpt/kreg.hpp"
#include "mpt/matching.hpp"
#include "mpt/montecarlo.hpp"
#include "mpt/nonseparable.hpp"
#include "mpt/separable.hpp"

namespace mpt::io {

// CSV with the exact header y,d,x,z. d must be integers contiguous from 1,
// z integers from 0. Schema violations raise SchemaError naming the cell.
kreg::Sample load_csv(const std::string& path);
void save_csv(const kreg::Sample& s, const std::string& path);

// JSON bindings for configurations and results.
dgp::OrderedChoiceSpec ordered_spec_from_json(const nlohmann::json& j);
dgp::TwoBinarySpec two_binary_spec_from_json(const nlohmann::json& j);
kreg::BandwidthConfig bandwidth_from_json(const nlohmann::json& j);
nonseparable::SieveConfig sieve_from_json(const nlohmann::json& j);
mc::McConfig mc_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const matching::MatchingFit& fit);
nlohmann::json to_json(const separable::SeparableFit& fit);
nlohmann::json to_json(const nonseparable::NonseparableFit& fit);
nlohmann::json to_json(const mc::McReport& report);

nlohmann::json load_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace mpt::io
