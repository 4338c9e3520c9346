#include "incr/bidding.hpp"

#include <cmath>
#include <random>

#include "incr/errors.hpp"
#include "incr/features.hpp"
#include "incr/util.hpp"

namespace incr {
namespace {

constexpr std::uint64_t kTagAssignment = 0xa551;
constexpr std::uint64_t kTagUserDraw = 0xd4a3;

double hash_unit(std::uint64_t seed, std::uint64_t tag, const std::string& user) {
  std::uint64_t h = splitmix64(derive_seed(seed, tag, fnv1a64(user)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

std::vector<double> unpack(const Eigen::VectorXd& v) {
  std::vector<double> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = v[i];
  return out;
}

}  // namespace

void BidPolicy::validate() const {
  if (!(submit_probability_p > 0.0) || !(submit_probability_p <= 1.0))
    throw ConfigError("submit probability must be in (0, 1]");
  if (!std::isfinite(margin_value_mv) || margin_value_mv < 0.0)
    throw ConfigError("margin value must be finite and non-negative");
}

BidScorer::BidScorer(const CoefficientSet& coefficients, const BidPolicy& policy)
    : coefficients_(coefficients), policy_(policy) {
  policy_.validate();
  if (coefficients_.beta.size() != static_cast<Eigen::Index>(coefficients_.keys.size()))
    throw ConfigError("coefficient vector does not match the feature key set");
  point_beta_ = unpack(coefficients_.beta);
  draw_betas_.reserve(coefficients_.draws.size());
  for (const auto& d : coefficients_.draws) draw_betas_.push_back(unpack(d));
}

BidDecision BidScorer::compute_bid(const EventTimeline& history, const BidEvent& context,
                                   Rng& rng) {
  ++counters_.evaluated;
  BidDecision d;
  const std::vector<double>* beta = &point_beta_;
  if (policy_.thompson.enabled && !draw_betas_.empty()) {
    std::size_t idx;
    if (policy_.thompson.unit == ThompsonUnit::PerBid) {
      idx = std::uniform_int_distribution<std::size_t>(0, draw_betas_.size() - 1)(rng);
    } else {
      std::uint64_t h =
          splitmix64(derive_seed(policy_.selection_seed, kTagUserDraw, fnv1a64(context.user_id)));
      idx = static_cast<std::size_t>(h % draw_betas_.size());
    }
    d.draw_index = idx;
    beta = &draw_betas_[idx];
  }

  double value =
      policy_.margin_value_mv * incremental_value(history, context, coefficients_.keys, *beta);
  if (value < 0.0) {
    ++counters_.negative_value;
    value = 0.0;
  }
  d.ghost_bid_g = value;

  bool assigned;
  if (policy_.randomization_level == RandomizationLevel::BidLevel) {
    assigned = uniform01(rng) < policy_.submit_probability_p;
  } else {
    assigned = hash_unit(policy_.selection_seed, kTagAssignment, context.user_id) <
               policy_.submit_probability_p;
  }
  d.submitted_B = assigned && (policy_.two_point_floor || d.ghost_bid_g > 0.0);
  d.submitted_bid_b = d.submitted_B ? d.ghost_bid_g : 0.0;
  return d;
}

BidDecision compute_bid(const EventTimeline& history, const BidEvent& context,
                        const CoefficientSet& coefficients, const BidPolicy& policy, Rng& rng,
                        BidCounters* counters) {
  BidScorer scorer(coefficients, policy);
  BidDecision d = scorer.compute_bid(history, context, rng);
  if (counters) {
    counters->evaluated += scorer.counters().evaluated;
    counters->negative_value += scorer.counters().negative_value;
  }
  return d;
}

}  // namespace incr
