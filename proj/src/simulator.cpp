#include "incr/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "incr/errors.hpp"
#include "incr/kernels.hpp"
#include "incr/rng.hpp"
#include "incr/util.hpp"

namespace incr {
namespace {

constexpr std::uint64_t kSimSalt = 0x51b3;
constexpr std::uint64_t kStreamLatents = 1;
constexpr std::uint64_t kStreamAuctions = 2;
constexpr std::uint64_t kStreamMarket = 3;
constexpr std::uint64_t kStreamRetargets = 4;
constexpr std::uint64_t kStreamProposals = 5;
constexpr std::uint64_t kTagUserArm = 0xa57a;

constexpr double kPi = 3.14159265358979323846;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Explicit Box-Muller: exactly two engine draws per normal, so stream
// layouts never depend on the standard library's distribution internals.
double draw_normal(Rng& g) {
  double u1 = std::max(uniform01(g), 1e-300);
  double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

double draw_waiting_time(Rng& g, double rate) {
  double u = std::max(uniform01(g), 1e-300);
  return -std::log(u) / rate;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// One bid opportunity: arrival time plus the market's pre-drawn randomness,
// fixed per opportunity so factual and twin passes stay aligned no matter
// which intents feedback suppresses.
struct Opportunity {
  double t = 0.0;
  double clearing = 0.0;
  double u_submit = 0.0;
  double u_view = 0.0;
};

// One dominating-process proposal from the factual pass, replayed by the
// twin pass against the organic-only intensity.
struct Proposal {
  double t = 0.0;
  double u = 0.0;
  double bound = 0.0;
};

double key_weight_on(const FeatureKey& key, const BidEvent& bid) {
  if (key.characteristic == "unit" || key.characteristic == "auctions") return 1.0;
  auto it = bid.characteristics.find(key.characteristic);
  return it == bid.characteristics.end() ? 0.0 : it->second;
}

struct UserSim {
  const MarketConfig& cfg;
  std::uint64_t global_index;
  std::string uid;

  double propensity_q = 1.0;
  double auction_rate = 0.0;
  int segment = 0;
  bool arm_assigned = false;
  double p_win = 0.0;

  std::vector<Opportunity> opportunities;
  std::vector<double> retarget_times;
  std::vector<Proposal> proposals;

  std::uint64_t n_intents = 0;
  std::uint64_t n_wins = 0;
  std::uint64_t clamped = 0;
  std::uint64_t factual_conversions = 0;
  std::uint64_t twin_conversions = 0;

  UserSim(const MarketConfig& c, std::uint64_t gi) : cfg(c), global_index(gi) {
    uid = sim_user_id(gi);
    p_win = lognormal_cdf(cfg.clearing_price, cfg.bid_value);
    arm_assigned = user_level_assigned(cfg, uid);
    draw_latents();
    draw_opportunities();
    draw_retargets();
  }

  Rng stream(std::uint64_t which) const {
    return make_rng(cfg.rng_seed, kSimSalt, global_index, which);
  }

  void draw_latents() {
    Rng g = stream(kStreamLatents);
    double z = draw_normal(g);
    double w = draw_normal(g);
    double sa = cfg.auction_rate_sigma;
    auction_rate = cfg.auction_rate * std::exp(sa * z - 0.5 * sa * sa);
    if (cfg.confounding == ConfoundingKind::TargetedProspects) {
      double rho = cfg.confounding_rho;
      double sq = cfg.propensity_sigma;
      double mix = rho * z + std::sqrt(1.0 - rho * rho) * w;
      propensity_q = std::exp(sq * mix - 0.5 * sq * sq);
    }
    if (cfg.n_segments > 1) {
      segment = std::min<int>(int(uniform01(g) * double(cfg.n_segments)),
                              int(cfg.n_segments) - 1);
    }
  }

  void draw_opportunities() {
    Rng arrivals = stream(kStreamAuctions);
    Rng market = stream(kStreamMarket);
    double t = 0.0;
    while (true) {
      t += draw_waiting_time(arrivals, auction_rate);
      if (t >= cfg.horizon_T) break;
      Opportunity op;
      op.t = t;
      op.clearing =
          std::exp(cfg.clearing_price.mu + cfg.clearing_price.sigma * draw_normal(market));
      op.u_submit = uniform01(market);
      op.u_view = uniform01(market);
      opportunities.push_back(op);
    }
  }

  void draw_retargets() {
    if (cfg.retarget_rate <= 0.0) return;
    Rng g = stream(kStreamRetargets);
    double t = 0.0;
    while (true) {
      t += draw_waiting_time(g, cfg.retarget_rate);
      if (t >= cfg.horizon_T) break;
      retarget_times.push_back(t);
    }
  }

  // Upper bound on this won impression's future contribution to the ad part
  // of the intensity: densities bounded by their peaks, trig terms by 1.
  double impression_bound(const BidEvent& bid) const {
    double total = 0.0;
    for (std::size_t k = 0; k < cfg.true_effect.keys.size(); ++k) {
      double beta = cfg.true_effect.beta[k];
      if (beta <= 0.0) continue;
      const FeatureKey& key = cfg.true_effect.keys.keys[k];
      double w = key_weight_on(key, bid);
      if (w == 0.0) continue;
      if (key.viewable && !(bid.viewable_V.has_value() && *bid.viewable_V)) continue;
      double peak = peak_density(key.kernel);
      if (key.stock_class == StockClass::RetargetConjunction) {
        auto first_at = std::lower_bound(retarget_times.begin(), retarget_times.end(), bid.t_j);
        std::size_t n_before = std::size_t(first_at - retarget_times.begin());
        if (n_before == 0) continue;
        peak *= double(n_before) / *key.retarget_tau;
      }
      total += beta * w * peak;
    }
    return total;
  }

  double ad_intensity(const EventTimeline& tl, double t) const {
    if (cfg.true_effect.keys.size() == 0) return 0.0;
    FeatureFrame frame = evaluate_stock(tl, t, cfg.true_effect.keys);
    double s = 0.0;
    for (std::size_t k = 0; k < frame.columns.size(); ++k)
      s += cfg.true_effect.beta[k] * frame.columns[k];
    return s;
  }

  EventTimeline fresh_timeline() const {
    EventTimeline tl;
    tl.user_id = uid;
    tl.t_start = 0.0;
    tl.t_end = cfg.horizon_T;
    for (double tr : retarget_times) {
      RetargetEvent r;
      r.user_id = uid;
      r.t_r = tr;
      r.event_kind = "visit";
      tl.retargets.push_back(r);
    }
    return tl;
  }

  BidEvent make_intent(const Opportunity& op) const {
    BidEvent b;
    b.user_id = uid;
    b.t_j = op.t;
    b.ghost_bid_g = cfg.bid_value;
    b.p_win_g = p_win;
    b.p_viewable = cfg.p_viewable;
    if (cfg.n_segments > 1) b.characteristics["seg"] = double(segment);
    return b;
  }

  bool intent_suppressed(double t, double cooldown_until, std::uint64_t wins) const {
    if (cfg.feedback == FeedbackKind::NegativeTargeting) return t <= cooldown_until;
    if (cfg.feedback == FeedbackKind::FrequencyCap) return wins >= cfg.frequency_cap;
    return false;
  }

  EventTimeline run_factual() {
    EventTimeline tl = fresh_timeline();
    Rng prop = stream(kStreamProposals);
    double bound = propensity_q * cfg.true_alpha.max_rate();
    double next_proposal = draw_waiting_time(prop, bound);
    double cooldown_until = -kInf;
    std::uint64_t wins = 0;
    std::size_t ia = 0;

    while (true) {
      double ta = ia < opportunities.size() ? opportunities[ia].t : kInf;
      if (ta >= cfg.horizon_T && next_proposal >= cfg.horizon_T) break;
      if (ta <= next_proposal) {
        const Opportunity& op = opportunities[ia++];
        if (intent_suppressed(op.t, cooldown_until, wins)) continue;
        BidEvent b = make_intent(op);
        ++n_intents;
        bool assigned = cfg.randomization_level == RandomizationLevel::UserLevel
                            ? arm_assigned
                            : op.u_submit < cfg.submit_probability_p;
        if (assigned) {
          b.submitted_B = true;
          b.submitted_bid_b = cfg.bid_value;
          b.p_win_b = p_win;
          if (op.clearing <= cfg.bid_value) {
            b.won_A = true;
            b.cost_c = op.clearing;
            b.viewable_V = op.u_view < cfg.p_viewable;
            ++wins;
            ++n_wins;
            double inc = impression_bound(b);
            if (inc > 0.0) {
              bound += inc;
              next_proposal = op.t + draw_waiting_time(prop, bound);
            }
          }
        }
        tl.bids.push_back(b);
      } else {
        double t = next_proposal;
        double u = uniform01(prop);
        if (t < cfg.horizon_T) {
          proposals.push_back({t, u, bound});
          double lam = propensity_q * cfg.true_alpha.at(t) + ad_intensity(tl, t);
          if (lam < 0.0) {
            lam = 0.0;
            ++clamped;
          }
          if (u * bound < lam) {
            ConversionEvent c;
            c.user_id = uid;
            c.t_c = t;
            c.value_v = 1.0;
            c.margin_m = 1.0;
            tl.conversions.push_back(c);
            ++factual_conversions;
            if (cfg.feedback == FeedbackKind::NegativeTargeting)
              cooldown_until = t + cfg.cooldown_delta;
          }
        }
        next_proposal = t + draw_waiting_time(prop, bound);
      }
    }
    return tl;
  }

  // Submissions forced off; conversion proposals replayed against the
  // organic-only intensity. Intent suppression follows the twin's own
  // conversions (no wins exist, so a frequency cap never binds).
  EventTimeline run_twin() {
    EventTimeline tl = fresh_timeline();
    double cooldown_until = -kInf;
    std::size_t ia = 0, ip = 0;
    while (ia < opportunities.size() || ip < proposals.size()) {
      double ta = ia < opportunities.size() ? opportunities[ia].t : kInf;
      double tp = ip < proposals.size() ? proposals[ip].t : kInf;
      if (ta <= tp) {
        const Opportunity& op = opportunities[ia++];
        if (intent_suppressed(op.t, cooldown_until, 0)) continue;
        if (cfg.record_twin_log) tl.bids.push_back(make_intent(op));
      } else {
        const Proposal& p = proposals[ip++];
        double lam = propensity_q * cfg.true_alpha.at(p.t);
        if (p.u * p.bound < lam) {
          ++twin_conversions;
          if (cfg.feedback == FeedbackKind::NegativeTargeting)
            cooldown_until = p.t + cfg.cooldown_delta;
          ConversionEvent c;
          c.user_id = uid;
          c.t_c = p.t;
          c.value_v = 1.0;
          c.margin_m = 1.0;
          tl.conversions.push_back(c);
        }
      }
    }
    return tl;
  }
};

}  // namespace

double BaselineIntensity::at(double t) const {
  if (fourier.plain() || amplitude == 0.0) return constant;
  double phase = 2.0 * kPi * double(fourier.order_n) * t / fourier.period_S;
  double trig = fourier.phase_a == 1 ? std::sin(phase) : std::cos(phase);
  return constant + amplitude * trig;
}

double BaselineIntensity::max_rate() const { return constant + std::abs(amplitude); }

void BaselineIntensity::validate() const {
  if (!(constant > 0.0) || !std::isfinite(constant))
    throw ConfigError("baseline intensity constant must be positive");
  if (!std::isfinite(amplitude) || std::abs(amplitude) > constant)
    throw ConfigError("baseline sinusoid amplitude must satisfy |amplitude| <= constant");
  fourier.validate();
  if (amplitude != 0.0 && fourier.order_n < 1)
    throw ConfigError("baseline sinusoid needs order n >= 1");
}

void LognormalSpec::validate() const {
  if (!std::isfinite(mu)) throw ConfigError("lognormal mu must be finite");
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw ConfigError("lognormal sigma must be positive");
}

double lognormal_cdf(const LognormalSpec& spec, double x) {
  if (x <= 0.0) return 0.0;
  return normal_cdf((std::log(x) - spec.mu) / spec.sigma);
}

void TrueEffect::validate() const {
  keys.validate();
  if (beta.size() != keys.size())
    throw ConfigError("true effect beta length must match its key set");
  for (std::size_t k = 0; k < keys.size(); ++k) {
    const FeatureKey& key = keys.keys[k];
    if (key.stock_class != StockClass::AdStock &&
        key.stock_class != StockClass::RetargetConjunction)
      throw ConfigError("true effect keys must be AdStock or RetargetConjunction: " +
                        key.canonical());
    if (!std::isfinite(beta[k]))
      throw ConfigError("true effect coefficient must be finite: " + key.canonical());
    if (!std::isfinite(peak_density(key.kernel)))
      throw ConfigError("true effect kernel needs a finite peak density for thinning: " +
                        key.canonical());
  }
}

void MarketConfig::validate() const {
  if (n_users == 0) throw ConfigError("n_users must be positive");
  if (!(horizon_T > 0.0) || !std::isfinite(horizon_T))
    throw ConfigError("horizon_T must be positive");
  if (!(auction_rate > 0.0) || !std::isfinite(auction_rate))
    throw ConfigError("auction_rate must be positive");
  if (auction_rate_sigma < 0.0 || !std::isfinite(auction_rate_sigma))
    throw ConfigError("auction_rate_sigma must be nonnegative");
  if (retarget_rate < 0.0 || !std::isfinite(retarget_rate))
    throw ConfigError("retarget_rate must be nonnegative");
  clearing_price.validate();
  if (!(bid_value > 0.0) || !std::isfinite(bid_value))
    throw ConfigError("bid_value must be positive");
  if (p_viewable < 0.0 || p_viewable > 1.0)
    throw ConfigError("p_viewable must lie in [0, 1]");
  true_alpha.validate();
  true_effect.validate();
  if (confounding_rho < 0.0 || confounding_rho >= 1.0)
    throw ConfigError("confounding rho must lie in [0, 1)");
  if (confounding == ConfoundingKind::TargetedProspects) {
    if (auction_rate_sigma <= 0.0)
      throw ConfigError("TargetedProspects needs auction_rate_sigma > 0");
    if (!(propensity_sigma > 0.0) || !std::isfinite(propensity_sigma))
      throw ConfigError("TargetedProspects needs propensity_sigma > 0");
  }
  if (cooldown_delta < 0.0 || !std::isfinite(cooldown_delta))
    throw ConfigError("cooldown_delta must be nonnegative");
  if (feedback == FeedbackKind::NegativeTargeting && cooldown_delta <= 0.0)
    throw ConfigError("NegativeTargeting needs cooldown_delta > 0");
  if (feedback == FeedbackKind::FrequencyCap && frequency_cap == 0)
    throw ConfigError("FrequencyCap needs frequency_cap >= 1");
  if (!(submit_probability_p > 0.0) || submit_probability_p > 1.0)
    throw ConfigError("submit_probability_p must lie in (0, 1]");
  if (n_segments == 0) throw ConfigError("n_segments must be positive");
}

bool user_level_assigned(const MarketConfig& config, const std::string& user_id) {
  std::uint64_t h =
      splitmix64(derive_seed(config.rng_seed, kTagUserArm, fnv1a64(user_id)));
  return double(h >> 11) * 0x1.0p-53 < config.submit_probability_p;
}

std::string sim_user_id(std::uint64_t global_index) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "u%08llu", static_cast<unsigned long long>(global_index));
  return std::string(buf);
}

SimulationResult simulate(const MarketConfig& config) {
  config.validate();
  SimulationResult out;
  out.timelines.reserve(config.n_users);
  if (config.record_twin_log) out.twin_timelines.reserve(config.n_users);

  for (std::size_t i = 0; i < config.n_users; ++i) {
    UserSim sim(config, config.user_index_offset + i);
    out.timelines.push_back(sim.run_factual());
    EventTimeline twin = sim.run_twin();
    if (config.record_twin_log) out.twin_timelines.push_back(std::move(twin));

    out.factual_conversions += sim.factual_conversions;
    out.twin_conversions += sim.twin_conversions;
    out.n_intents += sim.n_intents;
    out.n_wins += sim.n_wins;
    out.clamped_intensity += sim.clamped;
  }
  out.incremental_conversions =
      std::int64_t(out.factual_conversions) - std::int64_t(out.twin_conversions);
  return out;
}

}  // namespace incr
