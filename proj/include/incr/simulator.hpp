#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "incr/bidding.hpp"
#include "incr/events.hpp"
#include "incr/features.hpp"

namespace incr {

// Organic conversion intensity: a constant plus one optional sinusoid,
// alpha(t) = constant + amplitude * trig(2*pi*n*t / S).
struct BaselineIntensity {
  double constant = 0.01;
  double amplitude = 0.0;
  FourierSpec fourier;

  double at(double t) const;
  double max_rate() const;
  void validate() const;  // throws ConfigError; alpha must stay nonnegative
};

struct LognormalSpec {
  double mu = 0.0;
  double sigma = 0.5;

  void validate() const;
};

// P(X <= x) for X lognormal(mu, sigma); 0 for x <= 0.
double lognormal_cdf(const LognormalSpec& spec, double x);

// The data-generating ad effect: causal keys (AdStock or RetargetConjunction
// only; the organic part lives in BaselineIntensity) and their coefficients.
struct TrueEffect {
  FeatureSet keys;
  std::vector<double> beta;

  void validate() const;
};

enum class ConfoundingKind {
  None,
  // A latent per-user factor raises both the auction rate and the organic
  // conversion propensity, so heavily-advertised users convert more for
  // reasons the ads did not cause.
  TargetedProspects,
};

enum class FeedbackKind {
  None,
  // The advertiser drops a user from targeting for cooldown_delta after any
  // conversion: no bid intents at all during the cooldown.
  NegativeTargeting,
  // Targeting stops once a user has seen frequency_cap won impressions.
  FrequencyCap,
};

struct MarketConfig {
  std::size_t n_users = 1000;
  // Global index of the first user; lets a large run be produced in chunks
  // whose per-user streams match the single-run layout exactly.
  std::uint64_t user_index_offset = 0;
  double horizon_T = 168.0;

  double auction_rate = 0.5;        // per-user bid-opportunity Poisson rate
  double auction_rate_sigma = 0.0;  // log-sd of per-user rate heterogeneity
  double retarget_rate = 0.0;       // organic "visit" event rate

  LognormalSpec clearing_price;
  double bid_value = 1.0;  // amount submitted when the coin says bid
  double p_viewable = 1.0;

  BaselineIntensity true_alpha;
  TrueEffect true_effect;

  ConfoundingKind confounding = ConfoundingKind::None;
  double confounding_rho = 0.0;   // corr of log auction rate and log propensity
  double propensity_sigma = 0.8;  // log-sd of the propensity multiplier

  FeedbackKind feedback = FeedbackKind::None;
  double cooldown_delta = 0.0;
  std::uint64_t frequency_cap = 0;

  RandomizationLevel randomization_level = RandomizationLevel::BidLevel;
  double submit_probability_p = 1.0;

  std::size_t n_segments = 1;  // >1 attaches a per-user "seg" characteristic
  std::uint64_t rng_seed = 0;
  bool record_twin_log = false;

  void validate() const;  // throws ConfigError
};

struct SimulationResult {
  std::vector<EventTimeline> timelines;
  std::vector<EventTimeline> twin_timelines;  // populated when record_twin_log

  std::uint64_t factual_conversions = 0;
  std::uint64_t twin_conversions = 0;
  // factual minus twin under shared random numbers; negative effects can
  // make it negative.
  std::int64_t incremental_conversions = 0;

  std::uint64_t n_intents = 0;
  std::uint64_t n_wins = 0;
  // Thinning proposals where the model intensity went negative and was
  // clamped to zero (possible under negative true_effect coefficients).
  std::uint64_t clamped_intensity = 0;
};

// Synthetic second-price market with known ground truth. Each user carries
// independent derived RNG streams; the counterfactual twin (submissions
// forced off) reuses the factual run's conversion proposals so the two runs
// are coupled pathwise, and their difference is the realized ad effect.
SimulationResult simulate(const MarketConfig& config);

// The persistent per-user submit coin used when randomization_level is
// UserLevel; exposed so analyses can reconstruct assignment arms.
bool user_level_assigned(const MarketConfig& config, const std::string& user_id);

std::string sim_user_id(std::uint64_t global_index);

}  // namespace incr
