#pragma once
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "incr/events.hpp"
#include "incr/kernels.hpp"

namespace incr {

enum class StockClass { AdStock, PotentialAdStock, GhostBidStock, Baseline, RetargetConjunction };

const char* to_string(StockClass c);
std::optional<StockClass> stock_class_from_string(const std::string& s);

// One feature column: a stock class conjoined with an optional characteristic
// weight, decay kernel, Fourier term, and retarget event kernel.
struct FeatureKey {
  StockClass stock_class = StockClass::Baseline;
  std::string characteristic = "unit";  // "unit" means w_ij = 1
  KernelSpec kernel;                    // unused for Baseline
  FourierSpec fourier;                  // plain() when order 0
  std::optional<double> retarget_tau;   // event-stock scale for conjunctions
  bool viewable = false;  // ex post V_j in stock evaluation, ex ante p_viewable in valuation

  void validate() const;        // throws ConfigError
  std::string canonical() const;  // stable column id, CSV safe
};

struct FeatureSet {
  std::vector<FeatureKey> keys;

  std::size_t size() const { return keys.size(); }
  void validate() const;  // per-key validity plus duplicate canonical check
  std::vector<std::size_t> indices_of(StockClass c) const;
  // Index of the Baseline/unit/order-0 intercept column, if declared.
  std::optional<std::size_t> intercept_index() const;
};

// Stable 16-hex-digit digest of the ordered canonical column ids; persisted
// with fitted coefficients so a model is never scored against other columns.
std::string feature_config_hash(const FeatureSet& keys);

// One evaluated row: columns are aligned with the FeatureSet key order.
struct FeatureFrame {
  std::string user_id;
  double t = 0.0;
  double y = 0.0;
  double sample_weight = 1.0;
  std::vector<double> columns;
};

// Stock values at time t for every key: sums of gate x weight x density over
// qualifying events, times the Fourier term at t. Training-side (ex post)
// viewability: viewable keys multiply realized V_j.
FeatureFrame evaluate_stock(const EventTimeline& timeline, double t, const FeatureSet& keys);

// One won impression's contribution to each causal column (AdStock and
// RetargetConjunction) at time t. Gates, weights, and viewability follow
// evaluate_stock exactly, so summing over won impressions reproduces those
// columns; Baseline and instrument columns are zero.
std::vector<double> impression_stock_at(const EventTimeline& timeline, const BidEvent& bid,
                                        double t, const FeatureSet& keys);

// Integrals of the same per-impression decomposition, per key: the total
// expected effect of the impression over its whole decay and the part still
// outstanding after time t (t below t_j reads as t_j: nothing realized yet).
struct ImpressionValueSplit {
  std::vector<double> total;
  std::vector<double> residual;
};
ImpressionValueSplit impression_value_split(const EventTimeline& timeline, const BidEvent& bid,
                                            double t, const FeatureSet& keys);

// Expected incremental conversions from winning this bid, summed over the
// causal columns (AdStock and RetargetConjunction) with the given
// coefficients. Ex ante only: viewable keys use p_viewable, retarget pairs
// use events strictly before t_j, and no realized outcome enters.
double incremental_value(const EventTimeline& timeline, const BidEvent& bid,
                         const FeatureSet& keys, const std::vector<double>& beta);

}  // namespace incr
