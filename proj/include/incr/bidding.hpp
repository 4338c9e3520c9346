#pragma once
#include <cstdint>
#include <optional>
#include <vector>

#include "incr/estimators.hpp"
#include "incr/events.hpp"
#include "incr/rng.hpp"

namespace incr {

enum class BidStrategy { TruthfulSecondPrice };
enum class RandomizationLevel { BidLevel, UserLevel };
enum class ThompsonUnit { PerBid, PerUser };

struct ThompsonConfig {
  bool enabled = false;
  ThompsonUnit unit = ThompsonUnit::PerBid;
};

// Valuation and randomization policy. Under the two-point floor an assigned
// bid is always submitted, even at value zero, so assignment stays exactly
// independent of the valuation; without it zero-value bids abstain.
struct BidPolicy {
  double margin_value_mv = 1.0;  // payoff per incremental conversion (m * v)
  BidStrategy strategy = BidStrategy::TruthfulSecondPrice;
  double submit_probability_p = 1.0;
  RandomizationLevel randomization_level = RandomizationLevel::BidLevel;
  bool two_point_floor = false;
  ThompsonConfig thompson;
  std::uint64_t selection_seed = 0;  // user-level assignment and per-user draws

  void validate() const;
};

struct BidDecision {
  double ghost_bid_g = 0.0;  // valuation, clamped below at zero
  bool submitted_B = false;
  double submitted_bid_b = 0.0;
  std::optional<std::size_t> draw_index;  // bootstrap draw used, if sampled
};

struct BidCounters {
  std::uint64_t evaluated = 0;
  std::uint64_t negative_value = 0;  // valuations clamped up to zero
};

// Batch scorer over one immutable coefficient snapshot: the coefficient
// vectors are unpacked once, so each bid costs the valuation integral plus at
// most two uniform draws. Bid-level draws come from the caller's stream;
// user-level assignment and per-user Thompson picks hash the user id with
// selection_seed, so they are stable under any call order.
class BidScorer {
 public:
  BidScorer(const CoefficientSet& coefficients, const BidPolicy& policy);

  BidDecision compute_bid(const EventTimeline& history, const BidEvent& context, Rng& rng);

  const BidCounters& counters() const { return counters_; }

 private:
  const CoefficientSet& coefficients_;
  BidPolicy policy_;
  std::vector<double> point_beta_;
  std::vector<std::vector<double>> draw_betas_;
  BidCounters counters_;
};

// One-shot wrapper over BidScorer for callers without a batch.
BidDecision compute_bid(const EventTimeline& history, const BidEvent& context,
                        const CoefficientSet& coefficients, const BidPolicy& policy, Rng& rng,
                        BidCounters* counters = nullptr);

}  // namespace incr
