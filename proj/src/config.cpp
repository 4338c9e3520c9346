#include "incr/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "incr/errors.hpp"
#include "incr/rng.hpp"
#include "incr/util.hpp"

namespace incr {

using json = nlohmann::ordered_json;

// Shared with the coefficient-set persistence code.
json feature_key_to_json(const FeatureKey& k);
FeatureKey feature_key_from_json(const json& j);

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected a JSON object");
}

void expect_fields(const json& j, const std::string& path,
                   std::initializer_list<const char*> allowed) {
  expect_object(j, path);
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        known = true;
        break;
      }
    if (!known) fail(path + "." + item.key(), "unknown field");
  }
}

template <typename T>
void read_field(const json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(path + "." + key, e.what());
  }
}

template <typename Enum>
void read_enum(const json& j, const std::string& path, const char* key, Enum& out,
               std::initializer_list<std::pair<const char*, Enum>> names) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  std::string text;
  read_field(j, path, key, text);
  for (const auto& [name, value] : names)
    if (text == name) {
      out = value;
      return;
    }
  std::string options;
  for (const auto& [name, value] : names) {
    (void)value;
    if (!options.empty()) options += ", ";
    options += name;
  }
  fail(path + "." + key, "got '" + text + "', expected one of: " + options);
}

const char* to_string(ConfoundingKind c) {
  return c == ConfoundingKind::TargetedProspects ? "TargetedProspects" : "None";
}
const char* to_string(FeedbackKind f) {
  switch (f) {
    case FeedbackKind::NegativeTargeting: return "NegativeTargeting";
    case FeedbackKind::FrequencyCap: return "FrequencyCap";
    default: return "None";
  }
}
const char* to_string(RandomizationLevel level) {
  return level == RandomizationLevel::UserLevel ? "UserLevel" : "BidLevel";
}
const char* to_string(GmmWeighting w) {
  return w == GmmWeighting::Identity ? "Identity" : "DiagonalTwoStep";
}
const char* to_string(ThompsonUnit u) {
  return u == ThompsonUnit::PerUser ? "PerUser" : "PerBid";
}

FourierSpec fourier_from(const json& j, const std::string& path) {
  expect_fields(j, path, {"S", "n", "a"});
  FourierSpec f;
  read_field(j, path, "S", f.period_S);
  read_field(j, path, "n", f.order_n);
  read_field(j, path, "a", f.phase_a);
  return f;
}

json fourier_to(const FourierSpec& f) {
  json j;
  j["S"] = f.period_S;
  j["n"] = f.order_n;
  j["a"] = f.phase_a;
  return j;
}

FeatureSet feature_set_from(const json& j, const std::string& path) {
  expect_fields(j, path, {"keys"});
  FeatureSet set;
  if (!j.contains("keys")) return set;
  if (!j.at("keys").is_array()) fail(path + ".keys", "expected an array of feature keys");
  std::size_t i = 0;
  for (const auto& jk : j.at("keys")) {
    try {
      set.keys.push_back(feature_key_from_json(jk));
    } catch (const nlohmann::json::exception& e) {
      fail(path + ".keys[" + std::to_string(i) + "]", e.what());
    } catch (const ConfigError& e) {
      fail(path + ".keys[" + std::to_string(i) + "]", e.what());
    }
    ++i;
  }
  return set;
}

json feature_set_to(const FeatureSet& set) {
  json j;
  j["keys"] = json::array();
  for (const auto& k : set.keys) j["keys"].push_back(feature_key_to_json(k));
  return j;
}

MarketConfig market_from(const json& j, const std::string& path, std::uint64_t global_seed) {
  expect_fields(j, path,
                {"n_users", "user_index_offset", "horizon_T", "auction_rate",
                 "auction_rate_sigma", "retarget_rate", "clearing_price", "bid_value",
                 "p_viewable", "true_alpha", "true_effect", "confounding", "confounding_rho",
                 "propensity_sigma", "feedback", "cooldown_delta", "frequency_cap",
                 "randomization_level", "submit_probability_p", "n_segments", "rng_seed",
                 "record_twin_log"});
  MarketConfig m;
  read_field(j, path, "n_users", m.n_users);
  read_field(j, path, "user_index_offset", m.user_index_offset);
  read_field(j, path, "horizon_T", m.horizon_T);
  read_field(j, path, "auction_rate", m.auction_rate);
  read_field(j, path, "auction_rate_sigma", m.auction_rate_sigma);
  read_field(j, path, "retarget_rate", m.retarget_rate);
  if (j.contains("clearing_price") && !j.at("clearing_price").is_null()) {
    const json& jc = j.at("clearing_price");
    expect_fields(jc, path + ".clearing_price", {"mu", "sigma"});
    read_field(jc, path + ".clearing_price", "mu", m.clearing_price.mu);
    read_field(jc, path + ".clearing_price", "sigma", m.clearing_price.sigma);
  }
  read_field(j, path, "bid_value", m.bid_value);
  read_field(j, path, "p_viewable", m.p_viewable);
  if (j.contains("true_alpha") && !j.at("true_alpha").is_null()) {
    const json& ja = j.at("true_alpha");
    expect_fields(ja, path + ".true_alpha", {"constant", "amplitude", "fourier"});
    read_field(ja, path + ".true_alpha", "constant", m.true_alpha.constant);
    read_field(ja, path + ".true_alpha", "amplitude", m.true_alpha.amplitude);
    if (ja.contains("fourier") && !ja.at("fourier").is_null())
      m.true_alpha.fourier = fourier_from(ja.at("fourier"), path + ".true_alpha.fourier");
  }
  if (j.contains("true_effect") && !j.at("true_effect").is_null()) {
    const json& je = j.at("true_effect");
    expect_fields(je, path + ".true_effect", {"keys", "beta"});
    json keys_only = json::object();
    if (je.contains("keys")) keys_only["keys"] = je.at("keys");
    m.true_effect.keys = feature_set_from(keys_only, path + ".true_effect");
    read_field(je, path + ".true_effect", "beta", m.true_effect.beta);
  }
  read_enum(j, path, "confounding", m.confounding,
            {{"None", ConfoundingKind::None},
             {"TargetedProspects", ConfoundingKind::TargetedProspects}});
  read_field(j, path, "confounding_rho", m.confounding_rho);
  read_field(j, path, "propensity_sigma", m.propensity_sigma);
  read_enum(j, path, "feedback", m.feedback,
            {{"None", FeedbackKind::None},
             {"NegativeTargeting", FeedbackKind::NegativeTargeting},
             {"FrequencyCap", FeedbackKind::FrequencyCap}});
  read_field(j, path, "cooldown_delta", m.cooldown_delta);
  read_field(j, path, "frequency_cap", m.frequency_cap);
  read_enum(j, path, "randomization_level", m.randomization_level,
            {{"BidLevel", RandomizationLevel::BidLevel},
             {"UserLevel", RandomizationLevel::UserLevel}});
  read_field(j, path, "submit_probability_p", m.submit_probability_p);
  read_field(j, path, "n_segments", m.n_segments);
  m.rng_seed = derive_seed(global_seed, fnv1a64("market"));
  read_field(j, path, "rng_seed", m.rng_seed);
  read_field(j, path, "record_twin_log", m.record_twin_log);
  return m;
}

json market_to(const MarketConfig& m) {
  json j;
  j["n_users"] = m.n_users;
  j["user_index_offset"] = m.user_index_offset;
  j["horizon_T"] = m.horizon_T;
  j["auction_rate"] = m.auction_rate;
  j["auction_rate_sigma"] = m.auction_rate_sigma;
  j["retarget_rate"] = m.retarget_rate;
  j["clearing_price"] = {{"mu", m.clearing_price.mu}, {"sigma", m.clearing_price.sigma}};
  j["bid_value"] = m.bid_value;
  j["p_viewable"] = m.p_viewable;
  json ja;
  ja["constant"] = m.true_alpha.constant;
  ja["amplitude"] = m.true_alpha.amplitude;
  ja["fourier"] = fourier_to(m.true_alpha.fourier);
  j["true_alpha"] = ja;
  json je = feature_set_to(m.true_effect.keys);
  je["beta"] = m.true_effect.beta;
  j["true_effect"] = je;
  j["confounding"] = to_string(m.confounding);
  j["confounding_rho"] = m.confounding_rho;
  j["propensity_sigma"] = m.propensity_sigma;
  j["feedback"] = to_string(m.feedback);
  j["cooldown_delta"] = m.cooldown_delta;
  j["frequency_cap"] = m.frequency_cap;
  j["randomization_level"] = to_string(m.randomization_level);
  j["submit_probability_p"] = m.submit_probability_p;
  j["n_segments"] = m.n_segments;
  j["rng_seed"] = m.rng_seed;
  j["record_twin_log"] = m.record_twin_log;
  return j;
}

PanelConfig panel_from(const json& j, const std::string& path, std::uint64_t global_seed) {
  expect_fields(j, path, {"ratio_C", "rng_seed", "add_double_negatives", "holdout_fraction"});
  PanelConfig p;
  read_field(j, path, "ratio_C", p.ratio_C);
  p.rng_seed = derive_seed(global_seed, fnv1a64("panel"));
  read_field(j, path, "rng_seed", p.rng_seed);
  read_field(j, path, "add_double_negatives", p.add_double_negatives);
  read_field(j, path, "holdout_fraction", p.holdout_fraction);
  return p;
}

json panel_to(const PanelConfig& p) {
  json j;
  j["ratio_C"] = p.ratio_C;
  j["rng_seed"] = p.rng_seed;
  j["add_double_negatives"] = p.add_double_negatives;
  j["holdout_fraction"] = p.holdout_fraction;
  return j;
}

PipelineOptions estimator_from(const json& j, const std::string& path,
                               std::uint64_t global_seed) {
  expect_fields(j, path,
                {"ridge_grid", "hcc_grid", "weighting", "n_draws", "variance_multiplier",
                 "holdout_fraction", "seed", "threads"});
  PipelineOptions o;
  read_field(j, path, "ridge_grid", o.hcc.ridge_grid);
  read_field(j, path, "hcc_grid", o.hcc.hcc_grid);
  read_enum(j, path, "weighting", o.hcc.weighting,
            {{"Identity", GmmWeighting::Identity},
             {"DiagonalTwoStep", GmmWeighting::DiagonalTwoStep}});
  read_field(j, path, "n_draws", o.n_draws);
  read_field(j, path, "variance_multiplier", o.variance_multiplier);
  read_field(j, path, "holdout_fraction", o.holdout_fraction);
  o.seed = derive_seed(global_seed, fnv1a64("estimator"));
  read_field(j, path, "seed", o.seed);
  read_field(j, path, "threads", o.threads);
  return o;
}

json estimator_to(const PipelineOptions& o) {
  json j;
  j["ridge_grid"] = o.hcc.ridge_grid;
  j["hcc_grid"] = o.hcc.hcc_grid;
  j["weighting"] = to_string(o.hcc.weighting);
  j["n_draws"] = o.n_draws;
  j["variance_multiplier"] = o.variance_multiplier;
  j["holdout_fraction"] = o.holdout_fraction;
  j["seed"] = o.seed;
  j["threads"] = o.threads;
  return j;
}

BidPolicy bidding_from(const json& j, const std::string& path, std::uint64_t global_seed) {
  expect_fields(j, path,
                {"margin_value_mv", "strategy", "submit_probability_p", "randomization_level",
                 "two_point_floor", "thompson", "selection_seed"});
  BidPolicy b;
  read_field(j, path, "margin_value_mv", b.margin_value_mv);
  read_enum(j, path, "strategy", b.strategy,
            {{"TruthfulSecondPrice", BidStrategy::TruthfulSecondPrice}});
  read_field(j, path, "submit_probability_p", b.submit_probability_p);
  read_enum(j, path, "randomization_level", b.randomization_level,
            {{"BidLevel", RandomizationLevel::BidLevel},
             {"UserLevel", RandomizationLevel::UserLevel}});
  read_field(j, path, "two_point_floor", b.two_point_floor);
  if (j.contains("thompson") && !j.at("thompson").is_null()) {
    const json& jt = j.at("thompson");
    expect_fields(jt, path + ".thompson", {"enabled", "unit"});
    read_field(jt, path + ".thompson", "enabled", b.thompson.enabled);
    read_enum(jt, path + ".thompson", "unit", b.thompson.unit,
              {{"PerBid", ThompsonUnit::PerBid}, {"PerUser", ThompsonUnit::PerUser}});
  }
  b.selection_seed = derive_seed(global_seed, fnv1a64("bidding"));
  read_field(j, path, "selection_seed", b.selection_seed);
  return b;
}

json bidding_to(const BidPolicy& b) {
  json j;
  j["margin_value_mv"] = b.margin_value_mv;
  j["strategy"] = "TruthfulSecondPrice";
  j["submit_probability_p"] = b.submit_probability_p;
  j["randomization_level"] = to_string(b.randomization_level);
  j["two_point_floor"] = b.two_point_floor;
  j["thompson"] = {{"enabled", b.thompson.enabled}, {"unit", to_string(b.thompson.unit)}};
  j["selection_seed"] = b.selection_seed;
  return j;
}

AttributionConfig attribution_from(const json& j, const std::string& path) {
  expect_fields(j, path, {"as_of", "slices"});
  AttributionConfig a;
  if (j.contains("as_of") && !j.at("as_of").is_null()) {
    double t = 0.0;
    read_field(j, path, "as_of", t);
    a.as_of = t;
  }
  if (j.contains("slices") && !j.at("slices").is_null()) {
    if (!j.at("slices").is_array()) fail(path + ".slices", "expected an array");
    std::size_t i = 0;
    for (const auto& js : j.at("slices")) {
      std::string sp = path + ".slices[" + std::to_string(i) + "]";
      expect_fields(js, sp, {"name", "equals"});
      SliceSpec s;
      read_field(js, sp, "name", s.name);
      read_field(js, sp, "equals", s.equals);
      a.slices.push_back(std::move(s));
      ++i;
    }
  }
  return a;
}

json attribution_to(const AttributionConfig& a) {
  json j;
  j["as_of"] = a.as_of ? json(*a.as_of) : json(nullptr);
  j["slices"] = json::array();
  for (const auto& s : a.slices) {
    json js;
    js["name"] = s.name;
    js["equals"] = s.equals.empty() ? json::object() : json(s.equals);
    j["slices"].push_back(js);
  }
  return j;
}

}  // namespace

void RunConfig::validate() const {
  market.validate();
  features.validate();
  panel.validate();
  bidding.validate();
  if (estimator.n_draws < 0) throw ConfigError("estimator.n_draws must be nonnegative");
  if (!(estimator.variance_multiplier > 0.0))
    throw ConfigError("estimator.variance_multiplier must be positive");
  if (estimator.holdout_fraction < 0.0 || estimator.holdout_fraction >= 1.0)
    throw ConfigError("estimator.holdout_fraction must lie in [0, 1)");
  if (estimator.hcc.ridge_grid.empty()) throw ConfigError("estimator.ridge_grid is empty");
  if (estimator.hcc.hcc_grid.empty()) throw ConfigError("estimator.hcc_grid is empty");
  if (estimator.threads < 0) throw ConfigError("estimator.threads must be nonnegative");
  if (attribution.as_of && !std::isfinite(*attribution.as_of))
    throw ConfigError("attribution.as_of must be finite");
  std::set<std::string> names;
  for (const auto& s : attribution.slices) {
    s.validate();
    if (!names.insert(s.name).second)
      throw ConfigError("attribution.slices: duplicate slice name '" + s.name + "'");
  }
  if (!(replicate.scale > 0.0) || replicate.scale > 10.0)
    throw ConfigError("replicate.scale must lie in (0, 10]");
}

RunConfig run_config_from_json(const json& j) {
  expect_fields(j, "config",
                {"rng_seed", "market", "features", "panel", "estimator", "bidding",
                 "attribution", "replicate", "io"});
  RunConfig c;
  read_field(j, "config", "rng_seed", c.rng_seed);
  c.market = market_from(j.contains("market") ? j.at("market") : json::object(),
                         "config.market", c.rng_seed);
  c.features = feature_set_from(j.contains("features") ? j.at("features") : json::object(),
                                "config.features");
  c.panel = panel_from(j.contains("panel") ? j.at("panel") : json::object(), "config.panel",
                       c.rng_seed);
  c.estimator = estimator_from(j.contains("estimator") ? j.at("estimator") : json::object(),
                               "config.estimator", c.rng_seed);
  c.bidding = bidding_from(j.contains("bidding") ? j.at("bidding") : json::object(),
                           "config.bidding", c.rng_seed);
  c.attribution = attribution_from(
      j.contains("attribution") ? j.at("attribution") : json::object(), "config.attribution");
  if (j.contains("replicate") && !j.at("replicate").is_null()) {
    expect_fields(j.at("replicate"), "config.replicate", {"scale"});
    read_field(j.at("replicate"), "config.replicate", "scale", c.replicate.scale);
  }
  if (j.contains("io") && !j.at("io").is_null()) {
    const json& ji = j.at("io");
    expect_fields(ji, "config.io", {"out_dir", "events", "panel", "model"});
    read_field(ji, "config.io", "out_dir", c.io.out_dir);
    read_field(ji, "config.io", "events", c.io.events);
    read_field(ji, "config.io", "panel", c.io.panel);
    read_field(ji, "config.io", "model", c.io.model);
  }
  c.validate();
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["rng_seed"] = c.rng_seed;
  j["market"] = market_to(c.market);
  j["features"] = feature_set_to(c.features);
  j["panel"] = panel_to(c.panel);
  j["estimator"] = estimator_to(c.estimator);
  j["bidding"] = bidding_to(c.bidding);
  j["attribution"] = attribution_to(c.attribution);
  j["replicate"] = {{"scale", c.replicate.scale}};
  j["io"] = {{"out_dir", c.io.out_dir},
             {"events", c.io.events},
             {"panel", c.io.panel},
             {"model", c.io.model}};
  return j;
}

std::string run_config_hash(const RunConfig& c) {
  return hex64(fnv1a64(run_config_to_json(c).dump()));
}

void apply_override(json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like section.key=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  std::string text = assignment.substr(eq + 1);
  json* cur = &j;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = path.find('.', start);
    std::string part =
        dot == std::string::npos ? path.substr(start) : path.substr(start, dot - start);
    if (part.empty()) throw ConfigError("bad override path: " + path);
    if (dot == std::string::npos) {
      json value;
      try {
        value = json::parse(text);
      } catch (const nlohmann::json::exception&) {
        value = text;  // bare strings need no quotes
      }
      (*cur)[part] = value;
      return;
    }
    if (!cur->contains(part) || !(*cur)[part].is_object()) (*cur)[part] = json::object();
    cur = &(*cur)[part];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace incr
