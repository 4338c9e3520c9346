#pragma once
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "incr/estimators.hpp"
#include "incr/events.hpp"

namespace incr {

// Attribution reads the structural part of a fitted model only: Baseline keys
// give the organic rate, AdStock and RetargetConjunction keys the ad effect.
// Instrument-class coefficients never enter a score.

// One impression's contribution to one conversion, under the denominator
// shared by the whole conversion.
struct ShareItem {
  std::size_t bid_index = 0;    // index into timeline.bids
  double delta_y_ij_tc = 0.0;   // modelled effect of the impression at t_c
  double s_ijc = 0.0;           // delta_y_ij_tc over the shared denominator
};

struct ConversionShares {
  std::string user_id;
  double t_c = 0.0;
  double alpha_tc = 0.0;    // organic intensity at the conversion time
  double delta_y_tc = 0.0;  // summed ad effect across impressions
  double predicted = 0.0;   // alpha_tc + delta_y_tc, the shared denominator
  double s_ic = 0.0;        // conversion-level share, the exact sum of items
  bool negative_effect = false;  // some impression scored below zero
  std::vector<ShareItem> items;  // one per won impression strictly before t_c
};

// Splits the conversion between organic intensity and the impressions that
// preceded it. The denominator must be positive; a degenerate prediction
// throws DomainError carrying the offending values.
ConversionShares conversion_shares(const EventTimeline& timeline,
                                   const CoefficientSet& coefficients,
                                   const ConversionEvent& conversion);

// Through-time accounting for one won impression at a reporting time as_of_t.
// Cost fields are null when delta_y_ij is zero but money was spent: the split
// is undefined and flagged instead of invented.
struct AttributionRecord {
  std::string user_id;
  std::size_t impression_ref = 0;             // index into timeline.bids
  std::optional<std::size_t> conversion_ref;  // set when tied to one conversion
  double s_ijc = 0.0;           // pairwise share when conversion_ref is set
  double s_ij_partial_t = 0.0;  // shares accrued from conversions up to as_of_t
  double r_ij_t = 0.0;          // expected effect still outstanding at as_of_t
  double delta_y_ij = 0.0;      // total expected incremental conversions
  std::optional<double> expected_share;    // partial scaled up by dy/(dy - r)
  std::optional<double> residual_cost;     // c_ij * r_ij_t / delta_y_ij
  std::optional<double> accumulated_cost;  // c_ij minus residual_cost
  double as_of_t = 0.0;
  bool negative_effect = false;
  bool zero_denominator = false;
};

// Partial/residual decomposition of one impression: conversions between t_j
// and as_of accrue pairwise shares, the rest of the expected effect is still
// in flight, and the cost splits in the same proportion.
AttributionRecord impression_accounting(const EventTimeline& timeline,
                                        const CoefficientSet& coefficients,
                                        std::size_t impression_index, double as_of);

// Report slice: impressions whose characteristics equal every listed value
// (missing characteristics read as 0). An empty filter matches everything.
struct SliceSpec {
  std::string name;
  std::map<std::string, double> equals;

  void validate() const;
};

struct RollupRow {
  std::string slice;
  std::size_t n_users = 0;  // users with a matching won impression by as_of
  std::size_t n_impressions = 0;
  double cost = 0.0;
  double accumulated_cost = 0.0;
  double residual_cost = 0.0;
  double incr_conversion_side = 0.0;  // pairwise shares, conversion-major sum
  double incr_impression_side = 0.0;  // partial + residual, impression-major
  double incr_model_side = 0.0;       // total expected effect of impressions
  std::optional<double> expected_cpia_s;        // cost / (partial + residual)
  std::optional<double> expected_cpia_partial;  // accumulated cost / partial
  // Diagnostics beyond the report columns; carried in the JSON report only.
  double incr_partial = 0.0;
  double incr_residual = 0.0;
  std::optional<double> lift_simple;  // mean effect over mean organic intensity
  std::size_t n_zero_denominator = 0;
};

// Campaign accounting per slice at one reporting time. Conversion-side and
// impression-side partial sums add the same pairwise shares in different
// orders, so they agree to rounding; the impression side additionally carries
// the outstanding residual.
std::vector<RollupRow> campaign_rollup(const std::vector<EventTimeline>& timelines,
                                       const CoefficientSet& coefficients, double as_of,
                                       const std::vector<SliceSpec>& slices);

// Fixed-column CSV (slice, n_users, n_impressions, cost, accumulated_cost,
// residual_cost, incr_conversion_side, incr_impression_side, incr_model_side,
// expected_cpia_s, expected_cpia_partial); nulls are empty fields.
std::string rollup_to_csv(const std::vector<RollupRow>& rows);

// JSON array with the CSV columns plus the diagnostic fields; nulls are null.
std::string rollup_to_json(const std::vector<RollupRow>& rows);

}  // namespace incr
