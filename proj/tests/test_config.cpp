#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "incr/config.hpp"
#include "incr/errors.hpp"
#include "incr/rng.hpp"
#include "incr/util.hpp"

using namespace incr;
using json = nlohmann::ordered_json;

namespace {

RunConfig nontrivial_config() {
  RunConfig c;
  c.rng_seed = 77;
  c.market.n_users = 4000;
  c.market.horizon_T = 240.0;
  c.market.auction_rate = 0.3;
  c.market.clearing_price.mu = -0.4;
  c.market.clearing_price.sigma = 0.7;
  c.market.p_viewable = 0.8;
  c.market.true_alpha.constant = 0.015;
  c.market.true_alpha.amplitude = 0.004;
  c.market.true_alpha.fourier = FourierSpec{24.0, 1, 1};
  FeatureKey eff;
  eff.stock_class = StockClass::AdStock;
  eff.kernel.family = KernelFamily::Exponential;
  eff.kernel.tau = 6.0;
  c.market.true_effect.keys.keys = {eff};
  c.market.true_effect.beta = {0.05};
  c.market.confounding = ConfoundingKind::TargetedProspects;
  c.market.confounding_rho = 0.4;
  c.market.auction_rate_sigma = 0.6;
  c.market.feedback = FeedbackKind::FrequencyCap;
  c.market.frequency_cap = 9;
  c.market.randomization_level = RandomizationLevel::UserLevel;
  c.market.submit_probability_p = 0.5;
  c.market.n_segments = 3;

  FeatureKey base;
  base.stock_class = StockClass::Baseline;
  FeatureKey ghost = eff;
  ghost.stock_class = StockClass::GhostBidStock;
  FeatureKey retc = eff;
  retc.stock_class = StockClass::RetargetConjunction;
  retc.retarget_tau = 12.0;
  retc.viewable = true;
  c.features.keys = {base, eff, ghost, retc};

  c.panel.ratio_C = 25.0;
  c.panel.holdout_fraction = 0.1;
  c.estimator.hcc.ridge_grid = {0.0, 0.1};
  c.estimator.hcc.hcc_grid = {0.0, 0.5, 1.0};
  c.estimator.hcc.weighting = GmmWeighting::Identity;
  c.estimator.n_draws = 12;
  c.estimator.holdout_fraction = 0.25;
  c.bidding.margin_value_mv = 2.5;
  c.bidding.submit_probability_p = 0.5;
  c.bidding.randomization_level = RandomizationLevel::UserLevel;
  c.bidding.two_point_floor = true;
  c.bidding.thompson.enabled = true;
  c.bidding.thompson.unit = ThompsonUnit::PerUser;
  c.attribution.as_of = 200.0;
  SliceSpec s1{"seg0", {{"seg", 0.0}}};
  SliceSpec s2{"seg1", {{"seg", 1.0}}};
  c.attribution.slices = {s1, s2};
  c.replicate.scale = 0.25;
  c.io.out_dir = "/tmp/incr-out";
  c.io.events = "ev.ndjson";
  c.io.panel = "panel.csv";
  c.io.model = "model.json";
  return c;
}

}  // namespace

TEST_CASE("defaults and derived section seeds") {
  RunConfig c = run_config_from_json(json::object());
  CHECK(c.rng_seed == 0);
  CHECK(c.market.rng_seed == derive_seed(0, fnv1a64("market")));
  CHECK(c.panel.rng_seed == derive_seed(0, fnv1a64("panel")));
  CHECK(c.estimator.seed == derive_seed(0, fnv1a64("estimator")));
  CHECK(c.bidding.selection_seed == derive_seed(0, fnv1a64("bidding")));
  CHECK(c.market.n_users == 1000);
  CHECK(c.replicate.scale == 1.0);
  CHECK(c.io.out_dir == ".");
  CHECK_FALSE(c.attribution.as_of.has_value());

  // The global seed moves every derived section seed with it.
  RunConfig c9 = run_config_from_json(json{{"rng_seed", 9}});
  CHECK(c9.market.rng_seed == derive_seed(9, fnv1a64("market")));
  CHECK(c9.market.rng_seed != c.market.rng_seed);
  CHECK(c9.market.rng_seed != c9.panel.rng_seed);

  // Explicit section seeds win over derivation.
  RunConfig ce = run_config_from_json(json{{"rng_seed", 9}, {"market", {{"rng_seed", 5}}}});
  CHECK(ce.market.rng_seed == 5);
  CHECK(ce.panel.rng_seed == derive_seed(9, fnv1a64("panel")));
}

TEST_CASE("canonical json round trip is exact") {
  RunConfig c = nontrivial_config();
  json j = run_config_to_json(c);
  RunConfig back = run_config_from_json(j);
  CHECK(run_config_to_json(back).dump() == j.dump());
  CHECK(run_config_hash(back) == run_config_hash(c));
  CHECK(run_config_hash(c).size() == 16);

  // Canonical form materializes every section even for a default config.
  json jd = run_config_to_json(run_config_from_json(json::object()));
  for (const char* key : {"rng_seed", "market", "features", "panel", "estimator", "bidding",
                          "attribution", "replicate", "io"})
    CHECK(jd.contains(key));

  RunConfig c2 = nontrivial_config();
  c2.market.auction_rate = 0.31;
  CHECK(run_config_hash(c2) != run_config_hash(c));
}

TEST_CASE("unknown fields and type mismatches name the dotted path") {
  auto message_of = [](const json& j) {
    try {
      run_config_from_json(j);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message_of(json{{"markets", json::object()}}).find("config.markets") !=
        std::string::npos);
  CHECK(message_of(json{{"market", {{"bogus", 1}}}}).find("config.market.bogus") !=
        std::string::npos);
  CHECK(message_of(json{{"market", {{"n_users", "many"}}}}).find("config.market.n_users") !=
        std::string::npos);
  CHECK(message_of(json{{"market", {{"true_alpha", {{"rate", 1}}}}}})
            .find("config.market.true_alpha.rate") != std::string::npos);
  CHECK(message_of(json{{"estimator", {{"weighting", "Cholesky"}}}})
            .find("Identity") != std::string::npos);
  CHECK(message_of(json{{"market", {{"feedback", "Retarget"}}}})
            .find("config.market.feedback") != std::string::npos);
  CHECK(message_of(json{{"attribution", {{"slices", {{{"name", "a"}, {"geo", 1}}}}}}})
            .find("config.attribution.slices[0].geo") != std::string::npos);
}

TEST_CASE("validation failures reject the parsed config") {
  CHECK_THROWS_AS(run_config_from_json(json{{"market", {{"horizon_T", -1.0}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"replicate", {{"scale", 0.0}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"estimator", {{"ridge_grid", json::array()}}}}),
                  ConfigError);
  json dup{{"attribution",
            {{"slices", {{{"name", "x"}}, {{"name", "x"}}}}}}};
  CHECK_THROWS_AS(run_config_from_json(dup), ConfigError);
}

TEST_CASE("overrides navigate dotted paths and parse values") {
  json j = json::object();
  apply_override(j, "market.n_users=250");
  apply_override(j, "market.true_alpha.constant=0.02");
  apply_override(j, "bidding.two_point_floor=true");
  apply_override(j, "io.out_dir=/tmp/run a");  // unquoted string value
  apply_override(j, "market.true_effect.beta=[0.1]");
  apply_override(
      j, "market.true_effect.keys=[{\"stock_class\":\"AdStock\",\"characteristic\":\"unit\","
         "\"kernel\":{\"family\":\"Exponential\",\"tau\":6.0}}]");
  RunConfig c = run_config_from_json(j);
  CHECK(c.market.n_users == 250);
  CHECK(c.market.true_alpha.constant == 0.02);
  CHECK(c.bidding.two_point_floor);
  CHECK(c.io.out_dir == "/tmp/run a");
  REQUIRE(c.market.true_effect.beta.size() == 1);
  CHECK(c.market.true_effect.keys.keys.at(0).stock_class == StockClass::AdStock);

  apply_override(j, "market.n_users=300");  // later override wins
  CHECK(run_config_from_json(j).market.n_users == 300);
  CHECK_THROWS_AS(apply_override(j, "no-equals-sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "=5"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "market..x=1"), ConfigError);
}

TEST_CASE("config files load with clear failure modes") {
  std::string path = "/tmp/incr_test_config.json";
  {
    std::ofstream out(path);
    out << run_config_to_json(nontrivial_config()).dump(2);
  }
  RunConfig c = load_run_config(path);
  CHECK(run_config_hash(c) == run_config_hash(nontrivial_config()));
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_run_config(path), ConfigError);
  {
    std::ofstream out(path);
    out << "{ not json";
  }
  CHECK_THROWS_AS(load_run_config(path), ConfigError);
  std::remove(path.c_str());
}
