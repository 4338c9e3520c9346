// incrbid: config-driven pipelines over the incrementality engine.
//
// Subcommands: simulate, panel, fit, score, report, bid, validate, replicate.
// Exit codes: 0 ok, 1 runtime failure, 2 usage or config error. Artifacts are
// written atomically (temp + rename) into io.out_dir and listed in a manifest
// recording the config hash, seed, versions, and wall time. INCR_LOG controls
// stderr verbosity (debug|info|warn|error).
#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "incr/attribution.hpp"
#include "incr/bidding.hpp"
#include "incr/config.hpp"
#include "incr/errors.hpp"
#include "incr/estimators.hpp"
#include "incr/events.hpp"
#include "incr/log.hpp"
#include "incr/panel.hpp"
#include "incr/replicate.hpp"
#include "incr/rng.hpp"
#include "incr/simulator.hpp"
#include "incr/util.hpp"

namespace {

using namespace incr;
using json = nlohmann::ordered_json;

constexpr const char* kVersion = "0.1.0";

struct CliArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  int threads = 0;
  std::string input;
  std::string output;
  std::string scenario;
};

int effective_threads(int flag) {
  if (flag < 0) throw ConfigError("--threads must be nonnegative");
  if (flag > 0) return flag;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

RunConfig load_config(const CliArgs& a) {
  json j = json::object();
  if (!a.config_path.empty()) {
    std::ifstream in(a.config_path);
    if (!in) throw ConfigError("cannot open config file: " + a.config_path);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      j = json::parse(buf.str());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(a.config_path + ": " + e.what());
    }
  }
  for (const auto& ov : a.overrides) apply_override(j, ov);
  if (a.seed) j["rng_seed"] = *a.seed;
  if (a.out_dir) {
    if (!j.contains("io") || !j["io"].is_object()) j["io"] = json::object();
    j["io"]["out_dir"] = *a.out_dir;
  }
  return run_config_from_json(j);
}

std::string join_path(const std::string& dir, const std::string& name) {
  if (dir.empty() || dir == ".") return name;
  return dir.back() == '/' ? dir + name : dir + "/" + name;
}

std::string events_name(const RunConfig& c) {
  return c.io.events.empty() ? "events.ndjson" : c.io.events;
}
std::string panel_name(const RunConfig& c) {
  return c.io.panel.empty() ? "panel.csv" : c.io.panel;
}
std::string model_name(const RunConfig& c) {
  return c.io.model.empty() ? "model.json" : c.io.model;
}

std::string panel_meta_name(const RunConfig& c) {
  std::string n = panel_name(c);
  if (n.size() > 4 && n.substr(n.size() - 4) == ".csv") n.resize(n.size() - 4);
  return n + ".meta.ndjson";
}

void ensure_out_dir(const RunConfig& c) {
  if (!c.io.out_dir.empty() && c.io.out_dir != ".")
    std::filesystem::create_directories(c.io.out_dir);
}

// Temp-and-rename so readers never observe a partial artifact and failures
// leave nothing behind.
void atomic_write(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write: " + tmp);
    out << content;
    if (!out) {
      std::filesystem::remove(tmp);
      throw DataError("short write: " + tmp);
    }
  }
  std::filesystem::rename(tmp, path);
}

template <typename WriteFn>
void atomic_write_with(const std::string& path, WriteFn&& fn) {
  std::string tmp = path + ".tmp";
  try {
    fn(tmp);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
  std::filesystem::rename(tmp, path);
}

void write_manifest(const RunConfig& cfg, const std::string& subcommand,
                    const std::vector<std::string>& artifacts, double wall_seconds) {
  json m;
  m["subcommand"] = subcommand;
  m["config_hash"] = run_config_hash(cfg);
  m["rng_seed"] = cfg.rng_seed;
  m["versions"] = {{"package", kVersion},
                   {"events_format", 1},
                   {"panel_format", 1},
                   {"model_format", 1}};
  m["wall_time_seconds"] = wall_seconds;
  m["artifacts"] = artifacts;
  atomic_write(join_path(cfg.io.out_dir, "manifest.json"), m.dump(2) + "\n");
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::vector<EventTimeline> ingest_or_fail(const std::string& path) {
  IngestResult r = ingest_file(path);
  if (!r.ok()) {
    for (std::size_t i = 0; i < std::min<std::size_t>(r.errors.size(), 10); ++i)
      std::cerr << path << ":" << r.errors[i].line_no << ": " << r.errors[i].reason << "\n";
    throw DataError(path + ": " + std::to_string(r.errors.size()) + " malformed event lines");
  }
  if (r.unknown_field_warnings > 0)
    log::warn(std::to_string(r.unknown_field_warnings) + " unknown event fields ignored");
  return std::move(r.timelines);
}

double default_as_of(const RunConfig& cfg, const std::vector<EventTimeline>& tls) {
  if (cfg.attribution.as_of) return *cfg.attribution.as_of;
  double t = 0.0;
  for (const auto& tl : tls) t = std::max(t, tl.t_end);
  return t;
}

int cmd_simulate(const RunConfig& cfg) {
  Stopwatch clock;
  ensure_out_dir(cfg);
  SimulationResult res = simulate(cfg.market);
  std::vector<std::string> artifacts;

  atomic_write(join_path(cfg.io.out_dir, events_name(cfg)), serialize_to_string(res.timelines));
  artifacts.push_back(events_name(cfg));
  if (cfg.market.record_twin_log) {
    std::string twin = "twin_" + events_name(cfg);
    atomic_write(join_path(cfg.io.out_dir, twin), serialize_to_string(res.twin_timelines));
    artifacts.push_back(twin);
  }

  json gt;
  gt["market"] = run_config_to_json(cfg).at("market");
  gt["realized"] = {{"factual_conversions", res.factual_conversions},
                    {"twin_conversions", res.twin_conversions},
                    {"incremental_conversions", res.incremental_conversions},
                    {"n_intents", res.n_intents},
                    {"n_wins", res.n_wins},
                    {"clamped_intensity", res.clamped_intensity}};
  atomic_write(join_path(cfg.io.out_dir, "ground_truth.json"), gt.dump(2) + "\n");
  artifacts.push_back("ground_truth.json");

  write_manifest(cfg, "simulate", artifacts, clock.seconds());
  std::cout << "simulate: users=" << cfg.market.n_users << " intents=" << res.n_intents
            << " wins=" << res.n_wins << " conversions=" << res.factual_conversions
            << " twin=" << res.twin_conversions
            << " incremental=" << res.incremental_conversions << "\n";
  return 0;
}

int cmd_panel(const RunConfig& cfg, int threads) {
  Stopwatch clock;
  if (cfg.features.keys.empty())
    throw ConfigError("features.keys is empty; nothing to evaluate");
  ensure_out_dir(cfg);
  std::vector<EventTimeline> tls = ingest_or_fail(join_path(cfg.io.out_dir, events_name(cfg)));
  Panel panel = build_panel(tls, cfg.features, cfg.panel, threads);

  atomic_write_with(join_path(cfg.io.out_dir, panel_name(cfg)), [&](const std::string& tmp) {
    write_panel_csv(panel, cfg.features, tmp);
  });
  atomic_write_with(join_path(cfg.io.out_dir, panel_meta_name(cfg)),
                    [&](const std::string& tmp) { write_panel_meta(panel, cfg.features, tmp); });
  write_manifest(cfg, "panel", {panel_name(cfg), panel_meta_name(cfg)}, clock.seconds());
  std::cout << "panel: rows=" << panel.rows.size() << " positives=" << panel.n_positive
            << " negatives=" << panel.n_negative
            << " double_negatives=" << panel.n_double_negative
            << " NT=" << fmt_double(panel.total_measure_NT) << "\n";
  return 0;
}

int cmd_fit(const RunConfig& cfg, int threads) {
  Stopwatch clock;
  ensure_out_dir(cfg);
  Panel panel = read_panel_csv(join_path(cfg.io.out_dir, panel_name(cfg)), cfg.features);
  PipelineOptions opt = cfg.estimator;
  opt.threads = threads;
  CoefficientSet set = fit_pipeline(panel, cfg.features, opt);
  atomic_write(join_path(cfg.io.out_dir, model_name(cfg)), coefficient_set_to_json(set));
  write_manifest(cfg, "fit", {model_name(cfg)}, clock.seconds());
  std::cout << "fit: lambda_ridge=" << fmt_double(set.lambda_ridge)
            << " lambda_hcc=" << fmt_double(set.lambda_hcc)
            << " r_squared=" << fmt_double(set.diagnostics.r_squared)
            << " hausman_p=" << fmt_double(set.diagnostics.hausman_p)
            << " draws=" << set.draws.size() << "\n";
  return 0;
}

json record_to_json(const AttributionRecord& rec) {
  json o;
  o["user_id"] = rec.user_id;
  o["impression_ref"] = rec.impression_ref;
  o["conversion_ref"] = rec.conversion_ref
                            ? json(static_cast<std::uint64_t>(*rec.conversion_ref))
                            : json(nullptr);
  o["s_ijc"] = rec.s_ijc;
  o["s_ij_partial_t"] = rec.s_ij_partial_t;
  o["r_ij_t"] = rec.r_ij_t;
  o["delta_y_ij"] = rec.delta_y_ij;
  o["expected_share"] = rec.expected_share ? json(*rec.expected_share) : json(nullptr);
  o["accumulated_cost"] = rec.accumulated_cost ? json(*rec.accumulated_cost) : json(nullptr);
  o["residual_cost"] = rec.residual_cost ? json(*rec.residual_cost) : json(nullptr);
  o["as_of_t"] = rec.as_of_t;
  o["negative_effect"] = rec.negative_effect;
  o["zero_denominator"] = rec.zero_denominator;
  return o;
}

int cmd_score(const RunConfig& cfg) {
  Stopwatch clock;
  ensure_out_dir(cfg);
  std::vector<EventTimeline> tls = ingest_or_fail(join_path(cfg.io.out_dir, events_name(cfg)));
  CoefficientSet model = load_coefficient_set(join_path(cfg.io.out_dir, model_name(cfg)));
  double as_of = default_as_of(cfg, tls);
  std::ostringstream out;
  std::size_t n = 0;
  for (const auto& tl : tls)
    for (std::size_t j = 0; j < tl.bids.size(); ++j) {
      if (!tl.bids[j].won_A) continue;
      out << record_to_json(impression_accounting(tl, model, j, as_of)).dump() << "\n";
      ++n;
    }
  atomic_write(join_path(cfg.io.out_dir, "score.ndjson"), out.str());
  write_manifest(cfg, "score", {"score.ndjson"}, clock.seconds());
  std::cout << "score: impressions=" << n << " as_of=" << fmt_double(as_of) << "\n";
  return 0;
}

int cmd_report(const RunConfig& cfg) {
  Stopwatch clock;
  ensure_out_dir(cfg);
  std::vector<EventTimeline> tls = ingest_or_fail(join_path(cfg.io.out_dir, events_name(cfg)));
  CoefficientSet model = load_coefficient_set(join_path(cfg.io.out_dir, model_name(cfg)));
  double as_of = default_as_of(cfg, tls);
  std::vector<SliceSpec> slices = cfg.attribution.slices;
  if (slices.empty()) slices.push_back(SliceSpec{"all", {}});
  std::vector<RollupRow> rows = campaign_rollup(tls, model, as_of, slices);
  atomic_write(join_path(cfg.io.out_dir, "report.csv"), rollup_to_csv(rows));
  atomic_write(join_path(cfg.io.out_dir, "report.json"), rollup_to_json(rows));
  write_manifest(cfg, "report", {"report.csv", "report.json"}, clock.seconds());
  std::cout << rollup_to_csv(rows);
  return 0;
}

int cmd_bid(const RunConfig& cfg, const CliArgs& args) {
  Stopwatch clock;
  std::vector<EventTimeline> tls = ingest_or_fail(args.input);
  CoefficientSet model = load_coefficient_set(join_path(cfg.io.out_dir, model_name(cfg)));
  BidScorer scorer(model, cfg.bidding);
  std::ostringstream out;
  for (const auto& tl : tls) {
    Rng rng = make_rng(cfg.bidding.selection_seed, fnv1a64("cli.bid"), fnv1a64(tl.user_id));
    for (const auto& b : tl.bids) {
      BidDecision dec = scorer.compute_bid(tl, b, rng);
      json o;
      o["user_id"] = tl.user_id;
      o["t_j"] = b.t_j;
      o["ghost_bid_g"] = dec.ghost_bid_g;
      o["submitted_B"] = dec.submitted_B;
      o["submitted_bid_b"] = dec.submitted_bid_b;
      o["draw_index"] =
          dec.draw_index ? json(static_cast<std::uint64_t>(*dec.draw_index)) : json(nullptr);
      out << o.dump() << "\n";
    }
  }
  std::string where;
  if (args.output == "-") {
    std::cout << out.str();
    where = "stdout";
  } else {
    ensure_out_dir(cfg);
    std::string name = args.output.empty() ? "bids.ndjson" : args.output;
    if (args.output.empty()) {
      atomic_write(join_path(cfg.io.out_dir, name), out.str());
      write_manifest(cfg, "bid", {name}, clock.seconds());
    } else {
      atomic_write(name, out.str());
    }
    where = name;
  }
  std::cerr << "bid: evaluated=" << scorer.counters().evaluated
            << " negative_value_clamps=" << scorer.counters().negative_value << " -> " << where
            << "\n";
  return 0;
}

int cmd_validate(const RunConfig& cfg, const CliArgs& args) {
  std::string path =
      args.input.empty() ? join_path(cfg.io.out_dir, events_name(cfg)) : args.input;
  IngestResult r = ingest_file(path);
  std::size_t bids = 0, convs = 0, rets = 0;
  for (const auto& tl : r.timelines) {
    bids += tl.bids.size();
    convs += tl.conversions.size();
    rets += tl.retargets.size();
  }
  std::cout << "validate: lines=" << r.n_lines << " users=" << r.timelines.size()
            << " bids=" << bids << " conversions=" << convs << " retargets=" << rets
            << " unknown_field_warnings=" << r.unknown_field_warnings
            << " errors=" << r.errors.size() << "\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(r.errors.size(), 10); ++i)
    std::cout << "  line " << r.errors[i].line_no << ": " << r.errors[i].reason << "\n";
  return r.ok() ? 0 : 1;
}

int cmd_replicate(const RunConfig& cfg, const CliArgs& args, int threads) {
  Stopwatch clock;
  ensure_out_dir(cfg);
  ScenarioResult res = run_scenario(args.scenario, cfg.rng_seed, cfg.replicate.scale, threads);
  std::string table = res.name + "_table.csv";
  std::string summary = res.name + "_summary.json";
  atomic_write(join_path(cfg.io.out_dir, table), res.table_csv);
  atomic_write(join_path(cfg.io.out_dir, summary), res.summary.dump(2) + "\n");
  write_manifest(cfg, "replicate", {table, summary}, clock.seconds());

  std::cout << res.table_csv;
  for (const auto& c : res.summary.at("checks"))
    std::cout << "check " << c.at("name").get<std::string>() << ": "
              << (c.at("pass").get<bool>() ? "PASS" : "FAIL")
              << " value=" << fmt_double(c.at("value").get<double>()) << "\n";
  if (cfg.replicate.scale != 1.0)
    std::cout << "note: scale=" << fmt_double(cfg.replicate.scale)
              << "; checks are calibrated for scale=1\n";
  std::cout << "scenario " << res.name << ": " << (res.passed ? "PASS" : "FAIL") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"incrementality bidding, attribution, and market simulation toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  CliArgs args;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "JSON run config");
    sub->add_option("--set", args.overrides,
                    "override a config field, e.g. --set market.n_users=500");
    sub->add_option("--seed", args.seed, "global rng seed (wins over --set rng_seed)");
    sub->add_option("--out", args.out_dir, "output directory (wins over io.out_dir)");
    sub->add_option("--threads", args.threads, "worker threads, 0 = all cores");
    return sub;
  };

  CLI::App* c_sim = add_common(app.add_subcommand("simulate", "generate a synthetic market log"));
  CLI::App* c_pan = add_common(app.add_subcommand("panel", "build the training panel from a log"));
  CLI::App* c_fit = add_common(app.add_subcommand("fit", "fit coefficients on a panel"));
  CLI::App* c_sco = add_common(app.add_subcommand("score", "per-impression attribution records"));
  CLI::App* c_rep = add_common(app.add_subcommand("report", "campaign rollup by slice"));
  CLI::App* c_bid = add_common(app.add_subcommand("bid", "batch bids for context events"));
  c_bid->add_option("--input", args.input, "bid-context NDJSON")->required();
  c_bid->add_option("--output", args.output, "bid NDJSON path ('-' = stdout)");
  CLI::App* c_val = add_common(app.add_subcommand("validate", "check an event log"));
  c_val->add_option("--input", args.input, "event NDJSON (defaults to io events path)");
  CLI::App* c_scn = add_common(app.add_subcommand("replicate", "run a named scenario"));
  c_scn->add_option("scenario", args.scenario, "one of: fig6, fig10, downsample, calibration")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    RunConfig cfg = load_config(args);
    int threads = effective_threads(args.threads);
    if (c_sim->parsed()) return cmd_simulate(cfg);
    if (c_pan->parsed()) return cmd_panel(cfg, threads);
    if (c_fit->parsed()) return cmd_fit(cfg, threads);
    if (c_sco->parsed()) return cmd_score(cfg);
    if (c_rep->parsed()) return cmd_report(cfg);
    if (c_bid->parsed()) return cmd_bid(cfg, args);
    if (c_val->parsed()) return cmd_validate(cfg, args);
    if (c_scn->parsed()) return cmd_replicate(cfg, args, threads);
    std::cerr << app.help();
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
