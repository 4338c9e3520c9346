#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "incr/errors.hpp"
#include "incr/features.hpp"
#include "support/quadrature.hpp"

using namespace incr;
using testsupport::integrate;
using testsupport::period_breaks;

namespace {

KernelSpec expk(double tau, double trunc = kInfinite) {
  KernelSpec k;
  k.family = KernelFamily::Exponential;
  k.tau = tau;
  k.truncation = trunc;
  return k;
}

KernelSpec gammak(double tau, double shape) {
  KernelSpec k;
  k.family = KernelFamily::Gamma;
  k.tau = tau;
  k.shape_k = shape;
  return k;
}

FourierSpec fspec(double S, int n, int a) {
  FourierSpec f;
  f.period_S = S;
  f.order_n = n;
  f.phase_a = a;
  return f;
}

FeatureKey make_key(StockClass c, KernelSpec k = expk(1.0), FourierSpec f = FourierSpec{},
                    const std::string& ch = "unit") {
  FeatureKey key;
  key.stock_class = c;
  key.characteristic = ch;
  key.kernel = k;
  key.fourier = f;
  return key;
}

BidEvent make_bid(double t_j, bool submitted, bool won, double p_win = 0.4,
                  double w_video = 0.0) {
  BidEvent b;
  b.user_id = "u";
  b.t_j = t_j;
  b.ghost_bid_g = 1.0;
  b.submitted_B = submitted;
  b.submitted_bid_b = submitted ? 1.0 : 0.0;
  b.p_win_b = p_win;
  b.p_win_g = p_win;
  b.won_A = won;
  if (won) {
    b.cost_c = 0.5;
    b.viewable_V = true;
  }
  b.p_viewable = 0.9;
  if (w_video != 0.0) b.characteristics["video"] = w_video;
  return b;
}

EventTimeline window_only(double a, double b) {
  EventTimeline t;
  t.user_id = "u";
  t.t_start = a;
  t.t_end = b;
  return t;
}

double trig_term(const FourierSpec& f, double t) {
  if (f.order_n == 0) return 1.0;
  double w = 2.0 * M_PI * f.order_n / f.period_S;
  return f.phase_a ? std::sin(w * t) : std::cos(w * t);
}

// Independent naive translation of the stock definitions: forward loops over
// every event, no ordering or pruning assumptions.
double oracle_key(const FeatureKey& key, const EventTimeline& tl, double t) {
  auto weight_of = [&](const BidEvent& b) {
    if (key.characteristic == "unit" || key.characteristic == "auctions") return 1.0;
    auto it = b.characteristics.find(key.characteristic);
    return it == b.characteristics.end() ? 0.0 : it->second;
  };
  double acc = 0.0;
  if (key.stock_class == StockClass::Baseline) {
    if (key.characteristic == "unit") {
      acc = 1.0;
    } else {
      for (const auto& b : tl.bids)
        if (b.t_j <= t) acc += weight_of(b);
    }
    return acc * trig_term(key.fourier, t);
  }
  for (const auto& b : tl.bids) {
    double gatew;
    if (key.stock_class == StockClass::PotentialAdStock) {
      if (!b.submitted_B) continue;
      gatew = b.p_win_b * (key.viewable ? b.p_viewable : 1.0);
    } else if (key.stock_class == StockClass::GhostBidStock) {
      gatew = b.p_win_g * (key.viewable ? b.p_viewable : 1.0);
    } else {  // AdStock and RetargetConjunction: won impressions
      if (!b.won_A) continue;
      gatew = key.viewable ? (b.viewable_V.value_or(false) ? 1.0 : 0.0) : 1.0;
    }
    double w = weight_of(b);
    if (key.stock_class == StockClass::RetargetConjunction) {
      if (!(t > b.t_j)) continue;
      KernelSpec ev = expk(*key.retarget_tau);
      for (const auto& r : tl.retargets) {
        if (!(b.t_j > r.t_r)) continue;
        acc += gatew * w * density_and_cdf(key.kernel, t - b.t_j).density *
               density_and_cdf(ev, t - r.t_r).density;
      }
    } else {
      if (b.t_j > t) continue;
      acc += gatew * w * density_and_cdf(key.kernel, t - b.t_j).density;
    }
  }
  return acc * trig_term(key.fourier, t);
}

}  // namespace

TEST_CASE("zero bids: stocks are zero, intercept is one") {
  FeatureSet set;
  set.keys.push_back(make_key(StockClass::Baseline));
  set.keys.push_back(make_key(StockClass::AdStock));
  set.keys.push_back(make_key(StockClass::PotentialAdStock));
  set.keys.push_back(make_key(StockClass::GhostBidStock));
  set.validate();
  auto tl = window_only(0, 100);
  auto frame = evaluate_stock(tl, 50.0, set);
  CHECK(frame.columns[0] == 1.0);
  CHECK(frame.columns[1] == 0.0);
  CHECK(frame.columns[2] == 0.0);
  CHECK(frame.columns[3] == 0.0);
  CHECK(frame.user_id == "u");
  CHECK(frame.t == 50.0);
  CHECK(frame.y == 0.0);
  CHECK(frame.sample_weight == 1.0);
  CHECK(set.intercept_index() == std::size_t{0});
}

TEST_CASE("one won impression decays as the kernel density") {
  FeatureSet set;
  set.keys.push_back(make_key(StockClass::AdStock, expk(1.0)));
  auto tl = window_only(0, 100);
  tl.bids.push_back(make_bid(5.0, true, true));
  auto frame = evaluate_stock(tl, 6.0, set);
  CHECK(frame.columns[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
}

TEST_CASE("gates: lost submitted bid feeds potential and ghost stock only") {
  FeatureSet set;
  set.keys.push_back(make_key(StockClass::AdStock, expk(1.0)));
  set.keys.push_back(make_key(StockClass::PotentialAdStock, expk(1.0)));
  set.keys.push_back(make_key(StockClass::GhostBidStock, expk(1.0)));
  auto tl = window_only(0, 100);
  tl.bids.push_back(make_bid(5.0, true, false, 0.4));
  auto frame = evaluate_stock(tl, 6.0, set);
  CHECK(frame.columns[0] == 0.0);
  CHECK(frame.columns[1] == doctest::Approx(0.4 * std::exp(-1.0)).epsilon(1e-14));
  CHECK(frame.columns[2] == doctest::Approx(0.4 * std::exp(-1.0)).epsilon(1e-14));

  // An unsubmitted intent reaches only the ghost column.
  tl.bids.clear();
  tl.bids.push_back(make_bid(5.0, false, false, 0.25));
  frame = evaluate_stock(tl, 6.0, set);
  CHECK(frame.columns[0] == 0.0);
  CHECK(frame.columns[1] == 0.0);
  CHECK(frame.columns[2] == doctest::Approx(0.25 * std::exp(-1.0)).epsilon(1e-14));
}

TEST_CASE("mixed bids and kernels match the naive per-event oracle") {
  FeatureSet set;
  for (double tau : {1.0, 7.0}) {
    set.keys.push_back(make_key(StockClass::AdStock, expk(tau)));
    set.keys.push_back(make_key(StockClass::PotentialAdStock, expk(tau)));
    set.keys.push_back(make_key(StockClass::GhostBidStock, expk(tau)));
    set.keys.push_back(make_key(StockClass::AdStock, expk(tau), FourierSpec{}, "video"));
  }
  set.keys.push_back(make_key(StockClass::AdStock, gammak(2.0, 3.0)));
  set.keys.push_back(make_key(StockClass::AdStock, expk(1.0), fspec(7.0, 1, 1)));
  set.validate();

  auto tl = window_only(0, 200);
  tl.bids.push_back(make_bid(1.0, true, true, 0.5, 0.8));
  tl.bids.push_back(make_bid(2.5, true, false, 0.3));
  tl.bids.push_back(make_bid(4.0, false, false, 0.2, 1.5));
  tl.bids.push_back(make_bid(4.75, true, true, 0.6, 0.4));
  tl.bids.push_back(make_bid(9.0, true, false, 0.1));

  for (double t : {5.0, 9.5, 30.0}) {
    auto frame = evaluate_stock(tl, t, set);
    for (std::size_t i = 0; i < set.size(); ++i) {
      double want = oracle_key(set.keys[i], tl, t);
      CHECK(std::fabs(frame.columns[i] - want) <= 1e-12 * std::max(1.0, std::fabs(want)));
    }
  }
}

TEST_CASE("retarget conjunction pairs match the oracle and respect strict gates") {
  FeatureKey key = make_key(StockClass::RetargetConjunction, expk(1.5));
  key.retarget_tau = 3.0;
  FeatureSet set;
  set.keys.push_back(key);
  set.validate();

  auto tl = window_only(0, 100);
  tl.retargets.push_back({"u", 1.0, "cart"});
  tl.retargets.push_back({"u", 6.0, "view"});
  tl.bids.push_back(make_bid(4.0, true, true));   // pairs with t_r=1 only
  tl.bids.push_back(make_bid(8.0, true, true));   // pairs with both
  tl.bids.push_back(make_bid(9.0, true, false));  // lost: no pair

  for (double t : {4.5, 8.0, 12.0}) {
    auto frame = evaluate_stock(tl, t, set);
    CHECK(frame.columns[0] ==
          doctest::Approx(oracle_key(key, tl, t)).epsilon(1e-12));
  }
  // At t exactly on an impression the strict gate excludes that impression.
  auto at_bid = evaluate_stock(tl, 8.0, set);
  KernelSpec ev = expk(3.0);
  double only_first = density_and_cdf(expk(1.5), 4.0).density * density_and_cdf(ev, 7.0).density;
  CHECK(at_bid.columns[0] == doctest::Approx(only_first).epsilon(1e-12));
}

TEST_CASE("baseline auction count runs over intents and takes Fourier terms") {
  FeatureSet set;
  set.keys.push_back(make_key(StockClass::Baseline, expk(1.0), FourierSpec{}, "auctions"));
  set.keys.push_back(make_key(StockClass::Baseline, expk(1.0), fspec(50.0, 1, 1), "auctions"));
  set.keys.push_back(make_key(StockClass::Baseline, expk(1.0), fspec(50.0, 2, 0)));
  set.validate();
  auto tl = window_only(0, 100);
  tl.bids.push_back(make_bid(1.0, true, true));
  tl.bids.push_back(make_bid(3.0, false, false));
  tl.bids.push_back(make_bid(5.0, true, false));
  auto frame = evaluate_stock(tl, 4.0, set);
  CHECK(frame.columns[0] == 2.0);  // intents at 1 and 3, regardless of outcome
  CHECK(frame.columns[1] == doctest::Approx(2.0 * std::sin(2 * M_PI * 4.0 / 50.0)).epsilon(1e-14));
  CHECK(frame.columns[2] == doctest::Approx(std::cos(2 * M_PI * 2 * 4.0 / 50.0)).epsilon(1e-14));
  auto late = evaluate_stock(tl, 100.0, set);
  CHECK(late.columns[0] == 3.0);
}

TEST_CASE("viewability: ex post V gates ad stock, ex ante p scales instruments") {
  FeatureKey viewed = make_key(StockClass::AdStock, expk(1.0));
  viewed.viewable = true;
  FeatureKey pot = make_key(StockClass::PotentialAdStock, expk(1.0));
  pot.viewable = true;
  FeatureSet set;
  set.keys.push_back(viewed);
  set.keys.push_back(pot);
  set.validate();

  auto tl = window_only(0, 100);
  auto b = make_bid(5.0, true, true, 0.4);
  b.viewable_V = false;  // won but never viewable
  tl.bids.push_back(b);
  auto frame = evaluate_stock(tl, 6.0, set);
  CHECK(frame.columns[0] == 0.0);
  CHECK(frame.columns[1] == doctest::Approx(0.4 * 0.9 * std::exp(-1.0)).epsilon(1e-14));

  tl.bids[0].viewable_V = true;
  frame = evaluate_stock(tl, 6.0, set);
  CHECK(frame.columns[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
}

TEST_CASE("additivity over single-event decompositions") {
  FeatureSet set;
  set.keys.push_back(make_key(StockClass::AdStock, expk(2.0), fspec(7.0, 1, 0)));
  set.keys.push_back(make_key(StockClass::PotentialAdStock, gammak(1.5, 2.0)));
  set.keys.push_back(make_key(StockClass::GhostBidStock, expk(0.5)));
  FeatureKey conj = make_key(StockClass::RetargetConjunction, expk(1.0));
  conj.retarget_tau = 2.0;
  set.keys.push_back(conj);
  set.validate();

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> U(0.0, 40.0);
  auto tl = window_only(0, 60);
  for (int i = 0; i < 8; ++i) {
    auto b = make_bid(U(rng), true, i % 2 == 0, 0.3 + 0.05 * i);
    tl.bids.push_back(b);
  }
  std::sort(tl.bids.begin(), tl.bids.end(),
            [](const BidEvent& a, const BidEvent& b) { return a.t_j < b.t_j; });
  for (int i = 0; i < 3; ++i) tl.retargets.push_back({"u", U(rng), "cart"});
  std::sort(tl.retargets.begin(), tl.retargets.end(),
            [](const RetargetEvent& a, const RetargetEvent& b) { return a.t_r < b.t_r; });

  double t = 47.0;
  auto whole = evaluate_stock(tl, t, set);
  std::vector<double> sum(set.size(), 0.0);
  for (const auto& b : tl.bids) {
    auto single = window_only(0, 60);
    single.bids.push_back(b);
    single.retargets = tl.retargets;  // pairs decompose per impression
    auto part = evaluate_stock(single, t, set);
    for (std::size_t i = 0; i < set.size(); ++i) sum[i] += part.columns[i];
  }
  for (std::size_t i = 0; i < set.size(); ++i)
    CHECK(whole.columns[i] == doctest::Approx(sum[i]).epsilon(1e-12));
}

TEST_CASE("incremental value: unit key and zero betas") {
  FeatureSet set;
  set.keys.push_back(make_key(StockClass::Baseline));
  set.keys.push_back(make_key(StockClass::AdStock, expk(1.0)));
  set.validate();
  auto tl = window_only(0, 100);
  auto bid = make_bid(2.0, true, false);
  CHECK(incremental_value(tl, bid, set, {5.0, 0.003}) == doctest::Approx(0.003).epsilon(1e-15));
  CHECK(incremental_value(tl, bid, set, {0.0, 0.0}) == 0.0);
}

TEST_CASE("incremental value matches quadrature of the coefficient-weighted stock") {
  auto tl = window_only(0, 4000.0);
  tl.retargets.push_back({"u", 0.5, "cart"});
  auto bid = make_bid(2.0, true, true);

  FeatureSet set;
  set.keys.push_back(make_key(StockClass::AdStock, expk(1.0)));
  set.keys.push_back(make_key(StockClass::AdStock, expk(1.0), fspec(7.0, 1, 1)));
  set.keys.push_back(make_key(StockClass::AdStock, expk(1.0), fspec(7.0, 1, 0)));
  set.keys.push_back(make_key(StockClass::AdStock, expk(2.0, 14.0), fspec(7.0, 2, 1)));
  set.keys.push_back(make_key(StockClass::AdStock, gammak(0.8, 2.0), fspec(7.0, 1, 0)));
  FeatureKey conj = make_key(StockClass::RetargetConjunction, expk(1.2));
  conj.retarget_tau = 2.5;
  set.keys.push_back(conj);
  FeatureKey conj_f = make_key(StockClass::RetargetConjunction, expk(1.2), fspec(7.0, 2, 0));
  conj_f.retarget_tau = 2.5;
  set.keys.push_back(conj_f);
  FeatureKey viewed = make_key(StockClass::AdStock, expk(3.0));
  viewed.viewable = true;
  set.keys.push_back(viewed);
  set.validate();

  std::vector<double> beta = {0.01, 0.002, -0.001, 0.004, 0.0035, 0.02, -0.007, 0.005};
  double got = incremental_value(tl, bid, set, beta);

  // Ex-ante expected stock attributable to this single impression.
  auto integrand = [&](double t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto& key = set.keys[i];
      double view = key.viewable ? bid.p_viewable : 1.0;
      double term = 0.0;
      if (key.stock_class == StockClass::AdStock) {
        term = density_and_cdf(key.kernel, t - bid.t_j).density;
      } else {
        term = density_and_cdf(key.kernel, t - bid.t_j).density *
               density_and_cdf(expk(*key.retarget_tau), t - tl.retargets[0].t_r).density;
      }
      acc += beta[i] * view * term * trig_term(key.fourier, t);
    }
    return acc;
  };
  double tail = bid.t_j + 200.0;
  double want = integrate(integrand, bid.t_j, tail, 1e-12, 1e-10,
                          period_breaks(bid.t_j, tail, 7.0 / 4.0));
  CHECK(std::fabs(got - want) <= 1e-7);

  // Spec'd three-key example, checked against the same quadrature.
  FeatureSet small;
  small.keys.push_back(make_key(StockClass::AdStock, expk(1.0)));
  small.keys.push_back(make_key(StockClass::AdStock, expk(1.0), fspec(7.0, 1, 1)));
  small.keys.push_back(make_key(StockClass::AdStock, expk(1.0), fspec(7.0, 1, 0)));
  std::vector<double> b3 = {0.01, 0.002, -0.001};
  double got3 = incremental_value(tl, bid, small, b3);
  auto integrand3 = [&](double t) {
    double d = density_and_cdf(expk(1.0), t - bid.t_j).density;
    return d * (b3[0] + b3[1] * trig_term(fspec(7.0, 1, 1), t) +
                b3[2] * trig_term(fspec(7.0, 1, 0), t));
  };
  double want3 = integrate(integrand3, bid.t_j, tail, 1e-13, 1e-11,
                           period_breaks(bid.t_j, tail, 7.0 / 4.0));
  CHECK(std::fabs(got3 - want3) <= 1e-9);
}

TEST_CASE("incremental value is ex ante: future events and realized V do not matter") {
  auto tl = window_only(0, 100);
  tl.retargets.push_back({"u", 1.0, "cart"});
  FeatureSet set;
  FeatureKey conj = make_key(StockClass::RetargetConjunction, expk(1.0));
  conj.retarget_tau = 2.0;
  set.keys.push_back(conj);
  FeatureKey viewed = make_key(StockClass::AdStock, expk(1.0));
  viewed.viewable = true;
  set.keys.push_back(viewed);
  set.validate();

  auto bid = make_bid(5.0, true, false);
  std::vector<double> beta = {0.02, 0.01};
  double before = incremental_value(tl, bid, set, beta);

  auto mutated = tl;
  mutated.retargets.push_back({"u", 6.0, "cart"});      // after t_j
  mutated.conversions.push_back({"u", 9.0, 10.0, 0.5});  // future outcome
  mutated.bids.push_back(make_bid(8.0, true, true));     // later impression
  auto bid2 = bid;
  bid2.won_A = true;
  bid2.viewable_V = false;  // realized viewability must not enter
  bid2.cost_c = 0.3;
  CHECK(incremental_value(mutated, bid2, set, beta) == before);

  // A retarget event at t_j exactly is not yet usable.
  auto at_tj = tl;
  at_tj.retargets.push_back({"u", 5.0, "cart"});
  CHECK(incremental_value(at_tj, bid, set, beta) == before);
}

TEST_CASE("validation and error paths") {
  auto tl = window_only(0, 10);
  FeatureSet set;
  set.keys.push_back(make_key(StockClass::AdStock, expk(1.0)));
  CHECK_THROWS_AS(evaluate_stock(tl, 11.0, set), DomainError);
  CHECK_THROWS_AS(evaluate_stock(tl, -1.0, set), DomainError);
  CHECK_THROWS_AS(incremental_value(tl, make_bid(1, true, false), set, {0.1, 0.2}), ConfigError);

  FeatureSet dup;
  dup.keys.push_back(make_key(StockClass::AdStock, expk(1.0)));
  dup.keys.push_back(make_key(StockClass::AdStock, expk(1.0)));
  CHECK_THROWS_AS(dup.validate(), ConfigError);

  FeatureKey base_rt = make_key(StockClass::Baseline);
  base_rt.retarget_tau = 2.0;
  CHECK_THROWS_AS(base_rt.validate(), ConfigError);

  FeatureKey base_v = make_key(StockClass::Baseline);
  base_v.viewable = true;
  CHECK_THROWS_AS(base_v.validate(), ConfigError);

  FeatureKey conj_gamma = make_key(StockClass::RetargetConjunction, gammak(1.0, 2.0));
  conj_gamma.retarget_tau = 1.0;
  CHECK_THROWS_AS(conj_gamma.validate(), ConfigError);

  FeatureKey conj_missing = make_key(StockClass::RetargetConjunction, expk(1.0));
  CHECK_THROWS_AS(conj_missing.validate(), ConfigError);

  FeatureKey ad_rt = make_key(StockClass::AdStock, expk(1.0));
  ad_rt.retarget_tau = 1.0;
  CHECK_THROWS_AS(ad_rt.validate(), ConfigError);

  FeatureKey bad_pair = make_key(StockClass::AdStock, expk(1.0, 10.0), fspec(7.0, 1, 1));
  CHECK_THROWS_AS(bad_pair.validate(), ConfigError);

  FeatureKey bad_char = make_key(StockClass::AdStock, expk(1.0));
  bad_char.characteristic = "has space";
  CHECK_THROWS_AS(bad_char.validate(), ConfigError);
}

TEST_CASE("canonical strings are stable and distinct") {
  CHECK(make_key(StockClass::Baseline).canonical() == "Baseline|unit|-|n0|-|-");
  CHECK(make_key(StockClass::AdStock, expk(1.0)).canonical() == "AdStock|unit|exp:t=1|n0|-|-");
  CHECK(make_key(StockClass::AdStock, expk(2.0, 14.0), fspec(7.0, 2, 1)).canonical() ==
        "AdStock|unit|exp:t=2:T=14|S=7:n=2:a=1|-|-");
  CHECK(make_key(StockClass::PotentialAdStock, gammak(0.5, 3.0), FourierSpec{}, "video")
            .canonical() == "PotentialAdStock|video|gam:t=0.5:k=3|n0|-|-");
  FeatureKey conj = make_key(StockClass::RetargetConjunction, expk(1.0));
  conj.retarget_tau = 3.0;
  CHECK(conj.canonical() == "RetargetConjunction|unit|exp:t=1|n0|rt=3|-");
  FeatureKey viewed = make_key(StockClass::AdStock, expk(1.0));
  viewed.viewable = true;
  CHECK(viewed.canonical() == "AdStock|unit|exp:t=1|n0|-|V");

  std::vector<FeatureKey> keys = {
      make_key(StockClass::AdStock, expk(1.0)),
      make_key(StockClass::AdStock, expk(1.0), fspec(7, 1, 0)),
      make_key(StockClass::AdStock, expk(1.0), fspec(7, 1, 1)),
      make_key(StockClass::GhostBidStock, expk(1.0)),
      viewed,
  };
  std::set<std::string> canon;
  for (const auto& k : keys) canon.insert(k.canonical());
  CHECK(canon.size() == keys.size());
}
