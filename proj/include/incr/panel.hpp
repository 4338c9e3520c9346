#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "incr/events.hpp"
#include "incr/features.hpp"

namespace incr {

struct PanelConfig {
  double ratio_C = 10.0;  // negatives per positive
  std::uint64_t rng_seed = 0;
  bool add_double_negatives = true;
  double holdout_fraction = 0.0;  // user-level split share

  void validate() const;
};

// Down-sampled training panel. Row weights: positives 1, double negatives -1
// (same columns as their positive), negatives NT/#{-} so they sum to the
// total observed time measure NT.
struct Panel {
  std::vector<FeatureFrame> rows;  // sorted by (user_id, t)
  double total_measure_NT = 0.0;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;
  std::size_t n_double_negative = 0;
};

Panel build_panel(const std::vector<EventTimeline>& timelines, const FeatureSet& keys,
                  const PanelConfig& config, int threads = 1);

// Deterministic user-level holdout membership; independent of enumeration
// order so shared timelines never leak across the split.
bool in_holdout(const std::string& user_id, double fraction, std::uint64_t seed);

struct PanelSplit {
  Panel train;
  Panel holdout;
};
PanelSplit split_panel(const Panel& panel, double fraction, std::uint64_t seed);

// Columnar CSV (user_id, t, y, weight, one column per feature key) plus an
// NDJSON sidecar carrying NT and the row counts.
void write_panel_csv(const Panel& panel, const FeatureSet& keys, const std::string& path);
void write_panel_meta(const Panel& panel, const FeatureSet& keys, const std::string& path);
Panel read_panel_csv(const std::string& path, const FeatureSet& expected_keys);

}  // namespace incr
