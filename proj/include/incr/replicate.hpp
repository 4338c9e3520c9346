#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace incr {

// One named end-to-end scenario run: a fixed synthetic design, a headline CSV
// table, and pass/fail checks with pinned tolerances.
struct ScenarioResult {
  std::string name;
  bool passed = false;
  std::string table_csv;
  nlohmann::ordered_json summary;  // seed, scale, checks, metrics
};

std::vector<std::string> scenario_names();

// Runs the named scenario. scale multiplies replication counts (and the
// simulated population where one is used) for cheap smoke runs; 1.0 is the
// full design the checks are calibrated for. Given (name, seed, scale) and a
// thread count the result is byte-identical across runs.
ScenarioResult run_scenario(const std::string& name, std::uint64_t seed, double scale,
                            int threads);

}  // namespace incr
