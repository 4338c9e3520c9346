#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "incr/attribution.hpp"
#include "incr/bidding.hpp"
#include "incr/estimators.hpp"
#include "incr/features.hpp"
#include "incr/panel.hpp"
#include "incr/simulator.hpp"

namespace incr {

struct AttributionConfig {
  // Report time; unset means "end of the ingested window".
  std::optional<double> as_of;
  std::vector<SliceSpec> slices;  // empty means one match-all slice "all"
};

struct ReplicateConfig {
  double scale = 1.0;  // shrinks scenario sizes; 1.0 is the reference setup
};

// Input/output paths for pipeline stages. Unset inputs default to the
// previous stage's artifact inside out_dir.
struct IoConfig {
  std::string out_dir = ".";
  std::string events;  // NDJSON event log (plain or .gz)
  std::string panel;   // panel CSV (its NDJSON sidecar sits next to it)
  std::string model;   // fitted coefficient set JSON
};

struct RunConfig {
  std::uint64_t rng_seed = 0;  // section seeds derive from this when unset
  MarketConfig market;
  FeatureSet features;
  PanelConfig panel;
  PipelineOptions estimator;
  BidPolicy bidding;
  AttributionConfig attribution;
  ReplicateConfig replicate;
  IoConfig io;

  void validate() const;  // throws ConfigError with a dotted field path
};

// Strict parse: unknown fields and type mismatches throw ConfigError naming
// the offending dotted path. Absent sections take defaults; absent section
// seeds derive from the global rng_seed.
RunConfig run_config_from_json(const nlohmann::ordered_json& j);

// Canonical form: every field materialized, enums as strings. Hash input.
nlohmann::ordered_json run_config_to_json(const RunConfig& config);

// Stable 16-hex digest of the canonical form, recorded in artifacts.
std::string run_config_hash(const RunConfig& config);

// Applies one "--set section.key=value" assignment to raw config JSON.
// The value text is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::ordered_json& j, const std::string& assignment);

RunConfig load_run_config(const std::string& path);

}  // namespace incr
