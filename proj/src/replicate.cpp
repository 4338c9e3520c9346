#include "incr/replicate.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "incr/errors.hpp"
#include "incr/estimators.hpp"
#include "incr/panel.hpp"
#include "incr/rng.hpp"
#include "incr/simulator.hpp"
#include "incr/util.hpp"

namespace incr {

using json = nlohmann::ordered_json;

namespace {

struct Check {
  std::string name;
  double value = 0.0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  bool pass() const { return value >= lower && value <= upper; }
};

json checks_to_json(const std::vector<Check>& checks) {
  json arr = json::array();
  for (const auto& c : checks) {
    json j;
    j["name"] = c.name;
    j["value"] = c.value;
    if (std::isfinite(c.lower)) j["lower"] = c.lower;
    if (std::isfinite(c.upper)) j["upper"] = c.upper;
    j["pass"] = c.pass();
    arr.push_back(j);
  }
  return arr;
}

ScenarioResult finish(std::string name, std::uint64_t seed, double scale,
                      std::vector<Check> checks, std::string table, json metrics) {
  ScenarioResult r;
  r.name = std::move(name);
  r.table_csv = std::move(table);
  r.passed = std::all_of(checks.begin(), checks.end(),
                         [](const Check& c) { return c.pass(); });
  r.summary["name"] = r.name;
  r.summary["seed"] = seed;
  r.summary["scale"] = scale;
  r.summary["passed"] = r.passed;
  r.summary["checks"] = checks_to_json(checks);
  r.summary["metrics"] = std::move(metrics);
  return r;
}

int scaled_reps(int base, double scale, int floor_reps) {
  return std::max(floor_reps, static_cast<int>(std::lround(base * scale)));
}

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;   // sample
  double var = 0.0;
  double se = 0.0;   // of the mean
};

MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd out;
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) out.var += (x - out.mean) * (x - out.mean);
    out.var /= static_cast<double>(v.size() - 1);
  }
  out.sd = std::sqrt(out.var);
  out.se = out.sd / std::sqrt(static_cast<double>(v.size()));
  return out;
}

FeatureKey stock_key(StockClass c, double tau) {
  FeatureKey k;
  k.stock_class = c;
  k.kernel.family = KernelFamily::Exponential;
  k.kernel.tau = tau;
  return k;
}

// ---------------------------------------------------------------------------
// Shared regression-level DGP: x = a z + u with instrument z, and a
// confounding dial rho that correlates the error with u. Slope truth is 1.
// ---------------------------------------------------------------------------

DesignMatrices linear_iv_draw(Eigen::Index n, double a, double rho, std::uint64_t seed) {
  Rng g = make_rng(seed, fnv1a64("rep.toy"));
  std::normal_distribution<double> N01(0.0, 1.0);
  DesignMatrices d;
  d.X.resize(n, 2);
  d.Z.resize(n, 2);
  d.y.resize(n);
  d.w = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double z = N01(g), u = N01(g), e = N01(g);
    double x = a * z + u;
    d.X(i, 0) = 1.0;
    d.X(i, 1) = x;
    d.Z(i, 0) = 1.0;
    d.Z(i, 1) = z;
    d.y[i] = 0.3 + 1.0 * x + rho * u + e;
  }
  d.x_endogenous = {false, true};
  d.x_intercept = 0;
  d.user_ids.resize(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < d.user_ids.size(); ++i) d.user_ids[i] = "u" + std::to_string(i);
  return d;
}

double hausman_p_value(std::uint64_t seed, Eigen::Index n, double rho, int n_draws,
                       int threads) {
  DesignMatrices d = linear_iv_draw(n, 0.5, rho, seed);
  Eigen::VectorXd ols_point = fit_ridge(d, 0.0);
  GmmFit iv_point = gmm_iv(d, 0.0, GmmWeighting::Identity);
  FitFunction both = [](const DesignMatrices& dd) {
    Eigen::VectorXd ols = fit_ridge(dd, 0.0);
    Eigen::VectorXd iv = gmm_iv(dd, 0.0, GmmWeighting::Identity).beta;
    Eigen::VectorXd out(2);
    out << iv[1], ols[1];
    return out;
  };
  BootstrapResult boot = bayesian_bootstrap(both, d, n_draws, 1.0, seed ^ 0x5eedULL, threads);
  std::vector<Eigen::VectorXd> iv_draws, ols_draws;
  for (const auto& dr : boot.draws) {
    iv_draws.push_back(dr.head(1));
    ols_draws.push_back(dr.tail(1));
  }
  Eigen::VectorXd biv(1), bols(1);
  biv << iv_point.beta[1];
  bols << ols_point[1];
  return hausman_statistic(biv, bols, draw_covariance(iv_draws), draw_covariance(ols_draws))
      .p_value;
}

// ---------------------------------------------------------------------------
// fig6: conversion-triggered targeting feedback. A cooldown shorter than the
// one-hour aggregation window wrecks the pooled user-hour count regression,
// while the continuous-time IV on the same logs stays on the truth.
// ---------------------------------------------------------------------------

double hourly_ols_slope(const std::vector<EventTimeline>& tls) {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& tl : tls) {
    int hours = static_cast<int>(std::ceil(tl.t_end - 1e-9));
    std::vector<double> x(static_cast<std::size_t>(hours), 0.0), y(x);
    for (const auto& b : tl.bids)
      if (b.won_A) {
        int h = static_cast<int>(b.t_j);
        if (h >= 0 && h < hours) x[static_cast<std::size_t>(h)] += 1.0;
      }
    for (const auto& c : tl.conversions) {
      int h = static_cast<int>(c.t_c);
      if (h >= 0 && h < hours) y[static_cast<std::size_t>(h)] += 1.0;
    }
    for (int h = 0; h < hours; ++h) {
      n += 1.0;
      sx += x[static_cast<std::size_t>(h)];
      sy += y[static_cast<std::size_t>(h)];
      sxx += x[static_cast<std::size_t>(h)] * x[static_cast<std::size_t>(h)];
      sxy += x[static_cast<std::size_t>(h)] * y[static_cast<std::size_t>(h)];
    }
  }
  return (sxy - sx * sy / n) / (sxx - sx * sx / n);
}

ScenarioResult feedback_bias_scenario(std::uint64_t seed, double scale, int threads) {
  const double beta_true = 0.10, tau = 0.25;
  const int reps = scaled_reps(50, scale, 3);
  const int n_users = std::max(2000, static_cast<int>(std::lround(100000 * scale)));

  MarketConfig m;
  m.n_users = n_users;
  m.horizon_T = 36.0;
  m.auction_rate = 0.35;
  m.clearing_price.mu = -0.4;
  m.clearing_price.sigma = 0.6;
  m.bid_value = 1.0;
  m.true_alpha.constant = 0.08;
  m.true_effect.keys.keys = {stock_key(StockClass::AdStock, tau)};
  m.true_effect.beta = {beta_true};
  m.feedback = FeedbackKind::NegativeTargeting;
  m.cooldown_delta = 0.95;
  m.submit_probability_p = 0.5;

  FeatureSet fs;
  fs.keys = {FeatureKey{}, stock_key(StockClass::AdStock, tau),
             stock_key(StockClass::GhostBidStock, tau),
             stock_key(StockClass::PotentialAdStock, tau)};

  std::vector<double> hourly, cont_ols, iv;
  for (int r = 0; r < reps; ++r) {
    m.rng_seed = derive_seed(seed, fnv1a64("fig6.mkt"), static_cast<std::uint64_t>(r));
    SimulationResult sim = simulate(m);
    hourly.push_back(hourly_ols_slope(sim.timelines));
    PanelConfig pc;
    pc.ratio_C = 10.0;
    pc.rng_seed = derive_seed(seed, fnv1a64("fig6.panel"), static_cast<std::uint64_t>(r));
    Panel panel = build_panel(sim.timelines, fs, pc, threads);
    DesignMatrices d = build_design(panel, fs);
    int xc = -1;
    for (std::size_t j = 0; j < d.x_feature.size(); ++j)
      if (d.x_feature[j] == 1) xc = static_cast<int>(j);
    iv.push_back(gmm_iv(d, 0.0, GmmWeighting::DiagonalTwoStep).beta[xc]);
    cont_ols.push_back(fit_ridge(d, 0.0)[xc]);
  }
  MeanSd h = mean_sd(hourly), o = mean_sd(cont_ols), v = mean_sd(iv);

  std::vector<Check> checks;
  checks.push_back({"hourly_ols_abs_rel_error", std::fabs(h.mean / beta_true - 1.0), 0.5,
                    std::numeric_limits<double>::infinity()});
  checks.push_back({"gmm_iv_abs_error_over_se",
                    v.se > 0.0 ? std::fabs(v.mean - beta_true) / v.se : 0.0,
                    -std::numeric_limits<double>::infinity(), 3.0});

  std::ostringstream t;
  t << "estimator,mean,sd,se_mean,rel_error\n";
  auto row = [&](const char* name, const MeanSd& s) {
    t << name << ',' << fmt_double(s.mean) << ',' << fmt_double(s.sd) << ','
      << fmt_double(s.se) << ',' << fmt_double(s.mean / beta_true - 1.0) << '\n';
  };
  row("hourly_ols", h);
  row("continuous_ols", o);
  row("gmm_iv", v);

  json metrics;
  metrics["beta_true"] = beta_true;
  metrics["replications"] = reps;
  metrics["n_users"] = n_users;
  return finish("fig6", seed, scale, std::move(checks), t.str(), std::move(metrics));
}

// ---------------------------------------------------------------------------
// fig10: the corrected fit tracks the correlational answer when the IV stage
// is noisy and migrates to the IV answer as the sample grows.
// ---------------------------------------------------------------------------

ScenarioResult estimator_drift_scenario(std::uint64_t seed, double scale, int threads) {
  (void)threads;
  const double a = 0.5, rho = 0.012;
  HccOptions opt;
  opt.ridge_grid = {0.0};
  opt.weighting = GmmWeighting::Identity;

  struct Cell {
    Eigen::Index n;
    int reps;
    double d_ols = 0.0, d_iv = 0.0, e_hcc = 0.0, e_ols = 0.0, e_iv = 0.0;
  };
  std::vector<Cell> cells = {{4000, scaled_reps(200, scale, 3), 0, 0, 0, 0, 0},
                             {43344, scaled_reps(200, scale, 3), 0, 0, 0, 0, 0},
                             {400000, scaled_reps(30, scale, 2), 0, 0, 0, 0, 0}};
  for (auto& c : cells) {
    for (int r = 0; r < c.reps; ++r) {
      std::uint64_t s = derive_seed(seed, fnv1a64("f10"), static_cast<std::uint64_t>(c.n),
                                    static_cast<std::uint64_t>(r));
      DesignMatrices train = linear_iv_draw(c.n, a, rho, s);
      DesignMatrices hold = linear_iv_draw(c.n, a, rho, s ^ 0x4d0ULL);
      HccFit fit = fit_hcc(train, opt, hold);
      double ols = fit_ridge(train, 0.0)[1];
      double iv = (fit.beta_corr + fit.delta_iv0)[1];
      double hcc = fit.beta[1];
      c.d_ols += (hcc - ols) * (hcc - ols);
      c.d_iv += (hcc - iv) * (hcc - iv);
      c.e_hcc += (hcc - 1.0) * (hcc - 1.0);
      c.e_ols += (ols - 1.0) * (ols - 1.0);
      c.e_iv += (iv - 1.0) * (iv - 1.0);
    }
    for (double* x : {&c.d_ols, &c.d_iv, &c.e_hcc, &c.e_ols, &c.e_iv})
      *x = std::sqrt(*x / c.reps);
  }

  std::vector<Check> checks;
  // Hugs OLS at the smallest size, hugs 2SLS at the largest.
  checks.push_back({"small_n_rmse_gap_ols_minus_2sls", cells.front().d_ols - cells.front().d_iv,
                    -std::numeric_limits<double>::infinity(), 0.0});
  checks.push_back({"large_n_rmse_gap_2sls_minus_ols", cells.back().d_iv - cells.back().d_ols,
                    -std::numeric_limits<double>::infinity(), 0.0});

  std::ostringstream t;
  t << "n,replications,rmse_hcc_vs_ols,rmse_hcc_vs_2sls,closer,rmse_hcc,rmse_ols,rmse_2sls\n";
  for (const auto& c : cells)
    t << c.n << ',' << c.reps << ',' << fmt_double(c.d_ols) << ',' << fmt_double(c.d_iv) << ','
      << (c.d_ols < c.d_iv ? "ols" : "2sls") << ',' << fmt_double(c.e_hcc) << ','
      << fmt_double(c.e_ols) << ',' << fmt_double(c.e_iv) << '\n';

  json metrics;
  metrics["a"] = a;
  metrics["rho"] = rho;
  metrics["slope_true"] = 1.0;
  return finish("fig10", seed, scale, std::move(checks), t.str(), std::move(metrics));
}

// ---------------------------------------------------------------------------
// downsample: paired panels from identical event logs at C=10 vs the C=200
// reference; the estimator variance ratio must stay near the 1 + 1/C law and
// both arms must stay unbiased.
// ---------------------------------------------------------------------------

ScenarioResult downsample_scenario(std::uint64_t seed, double scale, int threads) {
  const double beta_true = 0.05;
  const int reps = scaled_reps(200, scale, 4);

  FeatureKey ad = stock_key(StockClass::AdStock, 6.0);
  FeatureSet fs;
  fs.keys = {FeatureKey{}, ad};

  MarketConfig m;
  m.n_users = 1000;
  m.horizon_T = 48.0;
  m.auction_rate = 0.15;
  m.clearing_price.mu = -0.5;
  m.clearing_price.sigma = 0.5;
  m.bid_value = 1.0;
  m.true_alpha.constant = 0.02;
  m.true_effect.keys.keys = {ad};
  m.true_effect.beta = {beta_true};
  m.submit_probability_p = 0.5;

  std::vector<double> b10, b200;
  for (int r = 0; r < reps; ++r) {
    m.rng_seed = derive_seed(seed, fnv1a64("ds.mkt"), static_cast<std::uint64_t>(r));
    SimulationResult sim = simulate(m);
    for (double C : {10.0, 200.0}) {
      PanelConfig pc;
      pc.ratio_C = C;
      pc.rng_seed = derive_seed(seed, fnv1a64(C == 10.0 ? "ds.p10" : "ds.p200"),
                                static_cast<std::uint64_t>(r));
      Panel p = build_panel(sim.timelines, fs, pc, threads);
      DesignMatrices d = build_design(p, fs);
      Eigen::VectorXd beta = fit_ridge(d, 0.0);
      int xc = -1;
      for (std::size_t j = 0; j < d.x_feature.size(); ++j)
        if (d.x_feature[j] == 1) xc = static_cast<int>(j);
      (C == 10.0 ? b10 : b200).push_back(beta[xc]);
    }
  }
  MeanSd s10 = mean_sd(b10), s200 = mean_sd(b200);
  double ratio = s200.var > 0.0 ? s10.var / s200.var : 0.0;

  std::vector<Check> checks;
  checks.push_back({"variance_ratio_c10_over_c200", ratio,
                    -std::numeric_limits<double>::infinity(), 1.15});
  checks.push_back({"c10_abs_bias_over_se",
                    s10.se > 0.0 ? std::fabs(s10.mean - beta_true) / s10.se : 0.0,
                    -std::numeric_limits<double>::infinity(), 3.0});
  checks.push_back({"c200_abs_bias_over_se",
                    s200.se > 0.0 ? std::fabs(s200.mean - beta_true) / s200.se : 0.0,
                    -std::numeric_limits<double>::infinity(), 3.0});

  std::ostringstream t;
  t << "ratio_C,replications,mean,variance,abs_bias_over_se\n";
  t << "10," << reps << ',' << fmt_double(s10.mean) << ',' << fmt_double(s10.var) << ','
    << fmt_double(s10.se > 0.0 ? std::fabs(s10.mean - beta_true) / s10.se : 0.0) << '\n';
  t << "200," << reps << ',' << fmt_double(s200.mean) << ',' << fmt_double(s200.var) << ','
    << fmt_double(s200.se > 0.0 ? std::fabs(s200.mean - beta_true) / s200.se : 0.0) << '\n';

  json metrics;
  metrics["beta_true"] = beta_true;
  metrics["variance_ratio"] = ratio;
  metrics["ratio_law_prediction"] = (1.0 + 1.0 / 10.0) / (1.0 + 1.0 / 200.0);
  return finish("downsample", seed, scale, std::move(checks), t.str(), std::move(metrics));
}

// ---------------------------------------------------------------------------
// calibration: exogenous-null size and strong-confounding power of the
// Hausman test, plus bootstrap interval coverage.
// ---------------------------------------------------------------------------

ScenarioResult calibration_scenario(std::uint64_t seed, double scale, int threads) {
  const int n_size = scaled_reps(500, scale, 10);
  const int n_power = scaled_reps(100, scale, 5);
  const int n_cover = scaled_reps(200, scale, 10);

  int rejections = 0;
  for (int r = 0; r < n_size; ++r)
    if (hausman_p_value(derive_seed(seed, fnv1a64("cal.size"), static_cast<std::uint64_t>(r)),
                        2500, 0.0, 60, threads) < 0.05)
      ++rejections;
  double size = static_cast<double>(rejections) / n_size;

  int detected = 0;
  for (int r = 0; r < n_power; ++r)
    if (hausman_p_value(derive_seed(seed, fnv1a64("cal.power"), static_cast<std::uint64_t>(r)),
                        50000, 0.8, 24, threads) < 0.05)
      ++detected;
  double power = static_cast<double>(detected) / n_power;

  int covered = 0;
  for (int r = 0; r < n_cover; ++r) {
    std::uint64_t s = derive_seed(seed, fnv1a64("cal.cover"), static_cast<std::uint64_t>(r));
    DesignMatrices d = linear_iv_draw(2500, 0.5, 0.0, s);
    FitFunction wls = [](const DesignMatrices& dd) { return fit_ridge(dd, 0.0); };
    BootstrapResult boot = bayesian_bootstrap(wls, d, 20, 1.0, s ^ 0xc1ULL, threads);
    auto [lo, hi] = bootstrap_ci(boot.draws, 0.9);
    if (lo[1] <= 1.0 && 1.0 <= hi[1]) ++covered;
  }
  double coverage = static_cast<double>(covered) / n_cover;

  std::vector<Check> checks;
  checks.push_back({"hausman_size_at_5pct", size, 0.03, 0.08});
  checks.push_back({"hausman_power_rho08_n50k", power, 0.95,
                    std::numeric_limits<double>::infinity()});
  checks.push_back({"bootstrap_coverage_90pct", coverage, 0.85, 0.95});

  std::ostringstream t;
  t << "check,replications,value,lower,upper,pass\n";
  t << "hausman_size_at_5pct," << n_size << ',' << fmt_double(size) << ",0.03,0.08,"
    << (checks[0].pass() ? "yes" : "no") << '\n';
  t << "hausman_power_rho08_n50k," << n_power << ',' << fmt_double(power) << ",0.95,inf,"
    << (checks[1].pass() ? "yes" : "no") << '\n';
  t << "bootstrap_coverage_90pct," << n_cover << ',' << fmt_double(coverage) << ",0.85,0.95,"
    << (checks[2].pass() ? "yes" : "no") << '\n';

  json metrics;
  metrics["alpha_level"] = 0.05;
  metrics["ci_level"] = 0.9;
  return finish("calibration", seed, scale, std::move(checks), t.str(), std::move(metrics));
}

}  // namespace

std::vector<std::string> scenario_names() {
  return {"fig6", "fig10", "downsample", "calibration"};
}

ScenarioResult run_scenario(const std::string& name, std::uint64_t seed, double scale,
                            int threads) {
  if (!(scale > 0.0) || scale > 10.0) throw ConfigError("scenario scale must lie in (0, 10]");
  if (threads < 0) throw ConfigError("threads must be nonnegative");
  if (threads == 0) threads = 1;
  if (name == "fig6") return feedback_bias_scenario(seed, scale, threads);
  if (name == "fig10") return estimator_drift_scenario(seed, scale, threads);
  if (name == "downsample") return downsample_scenario(seed, scale, threads);
  if (name == "calibration") return calibration_scenario(seed, scale, threads);
  throw ConfigError("unknown scenario '" + name + "'; expected one of: fig6, fig10, downsample, calibration");
}

}  // namespace incr
