#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "incr/features.hpp"
#include "incr/panel.hpp"

namespace incr {

// Rows of the training problem: X regressors (baseline + won-impression
// stocks), Z instruments (baseline duplicated + potential/ghost stocks).
struct DesignMatrices {
  Eigen::MatrixXd X;
  Eigen::MatrixXd Z;  // may have zero columns for plain ridge problems
  Eigen::VectorXd y;
  Eigen::VectorXd w;
  std::vector<std::string> user_ids;  // per row; drives bootstrap weights

  std::vector<int> x_feature;  // X column -> FeatureSet index (-1 if synthetic)
  std::vector<int> z_feature;
  std::vector<bool> x_endogenous;  // true for instrumented stock columns
  std::size_t x_intercept = static_cast<std::size_t>(-1);

  std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
  void validate() const;
};

DesignMatrices build_design(const Panel& panel, const FeatureSet& keys);

// {0, 1e-4 .. 1e4 by decades, 1e12 as the infinity proxy}.
std::vector<double> default_lambda_grid();

// Weighted ridge, intercept unpenalized, internally standardized; solved by
// Jacobi-preconditioned conjugate gradient on the normal equations.
Eigen::VectorXd fit_ridge(const DesignMatrices& design, double lambda);

struct ControlFunctionFit {
  Eigen::VectorXd beta;       // structural coefficients, X column order
  // Control-function coefficients, one per endogenous column, reported as the
  // remaining gap from the plain weighted fit: at lambda_v = 0 each entry is
  // OLS minus 2SLS for its column, and all shrink to zero as lambda_v grows.
  Eigen::VectorXd beta_vhat;
};
// First-stage OLS of each endogenous column on Z, then a second stage of y on
// [X, vhat] with lambda_v penalizing only the vhat columns: lambda_v = 0 is
// 2SLS, lambda_v -> infinity is OLS.
ControlFunctionFit control_function_2sls(const DesignMatrices& design, double lambda_v);

enum class GmmWeighting { Identity, DiagonalTwoStep };

struct GmmFit {
  Eigen::VectorXd beta;
  double objective = 0.0;  // g' Omega^-1 g at the solution
};
GmmFit gmm_iv(const DesignMatrices& design, double lambda, GmmWeighting weighting);

struct HausmanResult {
  double H = 0.0;
  int dof = 0;
  double p_value = 1.0;
};
// Contrast form with the indefinite variance difference eigen-clipped to PSD
// and pseudo-inverted; dof is the post-clip rank.
HausmanResult hausman_statistic(const Eigen::VectorXd& beta_iv, const Eigen::VectorXd& beta_ols,
                                const Eigen::MatrixXd& var_iv, const Eigen::MatrixXd& var_ols);

struct HccOptions {
  std::vector<double> ridge_grid = default_lambda_grid();
  std::vector<double> hcc_grid = default_lambda_grid();
  GmmWeighting weighting = GmmWeighting::DiagonalTwoStep;
};

struct HccFit {
  Eigen::VectorXd beta;       // beta_corr + delta_hcc
  Eigen::VectorXd beta_corr;  // ridge stage at the selected lambda_ridge
  Eigen::VectorXd delta_hcc;  // penalized regression-on-residual step
  Eigen::VectorXd delta_iv0;  // unpenalized step: the IV-minus-ridge contrast
  double lambda_ridge = 0.0;
  double lambda_hcc = 0.0;
  double gmm_objective = 0.0;
  double r_squared = 0.0;
};
// Ridge stage cross-validated by holdout MSE, then the residual is fit by
// penalized GMM with lambda_hcc cross-validated by the holdout moment norm.
HccFit fit_hcc(const DesignMatrices& design, const HccOptions& options,
               const DesignMatrices& holdout);

using FitFunction = std::function<Eigen::VectorXd(const DesignMatrices&)>;

struct BootstrapResult {
  std::vector<Eigen::VectorXd> draws;
};
// Bayesian bootstrap: every draw rescales each user's rows by one unit-mean
// Gamma(1/m^2, m^2) weight; multiplier m widens exploration like a 1/m^2
// sample. Deterministic per (seed, draw, user).
BootstrapResult bayesian_bootstrap(const FitFunction& fit, const DesignMatrices& design,
                                   int n_draws, double variance_multiplier, std::uint64_t seed,
                                   int threads = 1);
// Empirical per-coefficient interval at the given central level (e.g. 0.9).
std::pair<Eigen::VectorXd, Eigen::VectorXd> bootstrap_ci(const std::vector<Eigen::VectorXd>& draws,
                                                         double level);
Eigen::MatrixXd draw_covariance(const std::vector<Eigen::VectorXd>& draws);

struct FitDiagnostics {
  double r_squared = 0.0;
  double gmm_objective = 0.0;
  double hausman_H = 0.0;
  int hausman_dof = 0;
  double hausman_p = 1.0;
};

// Fitted model over a feature set: beta is aligned with keys (instrument-only
// columns carry zero), draws are full bootstrap replicates of beta.
struct CoefficientSet {
  FeatureSet keys;
  Eigen::VectorXd beta;
  double lambda_ridge = 0.0;
  double lambda_hcc = 0.0;
  std::vector<Eigen::VectorXd> draws;
  FitDiagnostics diagnostics;
  std::string feature_config_hash;

  void validate() const;
};

struct PipelineOptions {
  HccOptions hcc;
  int n_draws = 20;
  double variance_multiplier = 1.0;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Full training pass: user-level holdout split, HCC point fit, then bootstrap
// draws refit with the selected lambdas held fixed; Hausman diagnostics from
// the draw covariances of the IV and ridge stages.
CoefficientSet fit_pipeline(const Panel& panel, const FeatureSet& keys,
                            const PipelineOptions& options);

// JSON persistence ({keys, beta, lambdas, draws, diagnostics, hash}).
std::string coefficient_set_to_json(const CoefficientSet& set);
CoefficientSet coefficient_set_from_json(const std::string& text);
void save_coefficient_set(const CoefficientSet& set, const std::string& path);
CoefficientSet load_coefficient_set(const std::string& path);

}  // namespace incr
