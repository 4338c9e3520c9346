#include "incr/estimators.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "incr/errors.hpp"
#include "incr/rng.hpp"
#include "incr/special.hpp"
#include "incr/util.hpp"

namespace incr {
namespace {

constexpr std::size_t kNone = static_cast<std::size_t>(-1);

void check_lambda(double lambda, const char* what) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw ConfigError(std::string(what) + " must be a finite non-negative real");
}

// ---------------------------------------------------------------------------
// Weighted moment caches. All solvers run on centered, per-sd-scaled columns
// and de-standardize afterwards; the intercept never enters a solve and is
// recovered from the weighted means, so it is never penalized.

struct BlockMoments {
  double sw = 0.0;
  Eigen::VectorXd m;         // weighted column means
  Eigen::MatrixXd G;         // A' W A, raw
  Eigen::VectorXd s;         // weighted per-column sd, 1 when inactive
  std::vector<char> active;  // non-constant, not the intercept
  std::size_t icpt = kNone;
};

struct TargetMoments {
  Eigen::VectorXd cy;  // A' W y, raw
  double my = 0.0;
  double syy = 0.0;
};

BlockMoments block_moments(const Eigen::MatrixXd& A, const Eigen::VectorXd& w,
                           std::size_t intercept_col) {
  BlockMoments b;
  const Eigen::Index p = A.cols();
  b.sw = w.sum();
  if (!(b.sw > 0.0)) throw NumericError("total sample weight must be positive");
  Eigen::MatrixXd Aw = w.asDiagonal() * A;
  b.m = A.cols() > 0 ? (Aw.colwise().sum().transpose() / b.sw).eval() : Eigen::VectorXd(0);
  b.G = A.transpose() * Aw;
  b.s = Eigen::VectorXd::Ones(p);
  b.active.assign(static_cast<std::size_t>(p), 0);
  b.icpt = intercept_col;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (static_cast<std::size_t>(j) == intercept_col) continue;
    double var = (b.G(j, j) - b.sw * b.m[j] * b.m[j]) / b.sw;
    double sd = var > 0.0 ? std::sqrt(var) : 0.0;
    if (sd > 1e-12 * std::max(1.0, std::abs(b.m[j]))) {
      b.s[j] = sd;
      b.active[static_cast<std::size_t>(j)] = 1;
    }
  }
  return b;
}

TargetMoments target_moments(const Eigen::MatrixXd& A, const Eigen::VectorXd& w,
                             const Eigen::VectorXd& y, double sw) {
  TargetMoments t;
  Eigen::VectorXd wy = w.cwiseProduct(y);
  t.cy = A.transpose() * wy;
  t.my = wy.sum() / sw;
  t.syy = y.dot(wy);
  return t;
}

std::vector<Eigen::Index> active_indices(const BlockMoments& b) {
  std::vector<Eigen::Index> idx;
  for (std::size_t j = 0; j < b.active.size(); ++j)
    if (b.active[j]) idx.push_back(static_cast<Eigen::Index>(j));
  return idx;
}

// Jacobi-preconditioned conjugate gradient for the (small, dense) normal
// equations. The PSD check is the curvature sign along each search direction.
Eigen::VectorXd pcg_spd(const Eigen::MatrixXd& H, const Eigen::VectorXd& c, const char* what) {
  const Eigen::Index p = H.rows();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(p);
  if (p == 0) return x;
  const double cnorm = c.norm();
  if (cnorm == 0.0) return x;
  const double floor = std::max(cnorm, 1e-300);
  Eigen::VectorXd minv(p);
  for (Eigen::Index i = 0; i < p; ++i) minv[i] = H(i, i) > 0.0 ? 1.0 / H(i, i) : 1.0;
  Eigen::VectorXd r = c;
  Eigen::VectorXd z = minv.cwiseProduct(r);
  Eigen::VectorXd d = z;
  double rz = r.dot(z);
  const int max_iter = static_cast<int>(60 * p + 400);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd hd = H * d;
    double dhd = d.dot(hd);
    if (!(dhd > 0.0)) {
      if (r.norm() <= 1e-12 * floor) break;
      throw NumericError(std::string(what) +
                         ": normal equations are not positive semi-definite under the given "
                         "weights");
    }
    double alpha = rz / dhd;
    x += alpha * d;
    r -= alpha * hd;
    if (r.norm() <= 1e-14 * floor) break;
    z = minv.cwiseProduct(r);
    double rz_next = r.dot(z);
    d = z + (rz_next / rz) * d;
    rz = rz_next;
  }
  double resid = (c - H * x).norm();
  if (!(resid <= 1e-9 * floor))
    throw NumericError(std::string(what) + ": conjugate gradient did not converge, residual " +
                       fmt_double(resid));
  return x;
}

// Weighted ridge on the standardized system. penalty = nullptr penalizes every
// active column with weight 1; otherwise per-original-column multipliers.
Eigen::VectorXd ridge_beta(const BlockMoments& b, const TargetMoments& t, double lambda,
                           const std::vector<double>* penalty) {
  const Eigen::Index p = b.G.rows();
  auto idx = active_indices(b);
  const Eigen::Index pa = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd H(pa, pa);
  Eigen::VectorXd c(pa);
  for (Eigen::Index a = 0; a < pa; ++a) {
    Eigen::Index ja = idx[static_cast<std::size_t>(a)];
    for (Eigen::Index bcol = 0; bcol < pa; ++bcol) {
      Eigen::Index jb = idx[static_cast<std::size_t>(bcol)];
      H(a, bcol) = (b.G(ja, jb) - b.sw * b.m[ja] * b.m[jb]) / (b.s[ja] * b.s[jb]);
    }
    double pen = penalty ? (*penalty)[static_cast<std::size_t>(ja)] : 1.0;
    H(a, a) += lambda * pen;
    c[a] = (t.cy[ja] - b.sw * b.m[ja] * t.my) / b.s[ja];
  }
  Eigen::VectorXd tilde = pcg_spd(H, c, "ridge");
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double dot = 0.0;
  for (Eigen::Index a = 0; a < pa; ++a) {
    Eigen::Index j = idx[static_cast<std::size_t>(a)];
    beta[j] = tilde[a] / b.s[j];
    dot += beta[j] * b.m[j];
  }
  if (b.icpt != kNone) {
    double mi = b.m[static_cast<Eigen::Index>(b.icpt)];
    if (std::abs(mi) < 1e-12) throw NumericError("intercept column is numerically zero");
    beta[static_cast<Eigen::Index>(b.icpt)] = (t.my - dot) / mi;
  }
  return beta;
}

double weighted_sse(const BlockMoments& b, const TargetMoments& t, const Eigen::VectorXd& beta) {
  return t.syy - 2.0 * beta.dot(t.cy) + beta.dot(b.G * beta);
}

// ---------------------------------------------------------------------------
// Instrumented problems.

struct IvProblem {
  const DesignMatrices* d = nullptr;
  BlockMoments bx, bz;
  TargetMoments ty;     // X block vs y
  Eigen::MatrixXd gzx;  // Z' W X, raw
  Eigen::VectorXd czy;  // Z' W y, raw
};

IvProblem make_iv(const DesignMatrices& d) {
  IvProblem p;
  p.d = &d;
  p.bx = block_moments(d.X, d.w, d.x_intercept);
  p.ty = target_moments(d.X, d.w, d.y, p.bx.sw);
  p.bz = block_moments(d.Z, d.w, kNone);
  Eigen::VectorXd wy = d.w.cwiseProduct(d.y);
  p.czy = d.Z.transpose() * wy;
  p.gzx = d.Z.transpose() * (d.w.asDiagonal() * d.X);
  return p;
}

struct GmmStep {
  Eigen::VectorXd delta_full;  // raw units over X columns, intercept recovered
  double objective = 0.0;      // weighted moment norm at the solution
};

// One penalized GMM solve of the residual y - X beta_base on instruments Z.
// Identity weighting first; DiagonalTwoStep rescales each moment by its
// empirical variance from the first-round residuals.
GmmStep gmm_step(const IvProblem& p, const Eigen::VectorXd& beta_base, double lambda,
                 GmmWeighting weighting) {
  const DesignMatrices& d = *p.d;
  const Eigen::Index px = d.X.cols();
  auto xi = active_indices(p.bx);
  auto zi = active_indices(p.bz);
  const Eigen::Index pa = static_cast<Eigen::Index>(xi.size());
  const Eigen::Index qa = static_cast<Eigen::Index>(zi.size());
  if (qa < pa)
    throw DataError("under-identified: fewer active instrument columns than regressors");

  Eigen::VectorXd czr = p.czy - p.gzx * beta_base;
  double rbar = p.ty.my - p.bx.m.dot(beta_base);

  GmmStep out;
  out.delta_full = Eigen::VectorXd::Zero(px);
  double mi = d.x_intercept != kNone ? p.bx.m[static_cast<Eigen::Index>(d.x_intercept)] : 1.0;
  if (d.x_intercept != kNone && std::abs(mi) < 1e-12)
    throw NumericError("intercept column is numerically zero");

  // Centered, scaled moment system.
  Eigen::MatrixXd A(qa, pa);
  Eigen::VectorXd b(qa);
  for (Eigen::Index l = 0; l < qa; ++l) {
    Eigen::Index zl = zi[static_cast<std::size_t>(l)];
    for (Eigen::Index j = 0; j < pa; ++j) {
      Eigen::Index xj = xi[static_cast<std::size_t>(j)];
      A(l, j) = (p.gzx(zl, xj) - p.bz.sw * p.bz.m[zl] * p.bx.m[xj]) / (p.bz.s[zl] * p.bx.s[xj]);
    }
    b[l] = (czr[zl] - p.bz.sw * p.bz.m[zl] * rbar) / p.bz.s[zl];
  }

  Eigen::VectorXd tilde;
  if (pa == 0) {
    tilde = Eigen::VectorXd(0);
    out.objective = b.squaredNorm();
  } else {
    Eigen::MatrixXd H = A.transpose() * A;
    H.diagonal().array() += lambda;
    tilde = pcg_spd(H, A.transpose() * b, "gmm");
    if (weighting == GmmWeighting::DiagonalTwoStep) {
      // Per-moment variance from the first-round residuals.
      Eigen::VectorXd V = Eigen::VectorXd::Zero(qa);
      const Eigen::Index n = d.X.rows();
      for (Eigen::Index i = 0; i < n; ++i) {
        double ri = d.y[i] - d.X.row(i).dot(beta_base) - rbar;
        for (Eigen::Index j = 0; j < pa; ++j) {
          Eigen::Index xj = xi[static_cast<std::size_t>(j)];
          ri -= tilde[j] * (d.X(i, xj) - p.bx.m[xj]) / p.bx.s[xj];
        }
        for (Eigen::Index l = 0; l < qa; ++l) {
          Eigen::Index zl = zi[static_cast<std::size_t>(l)];
          double g = d.w[i] * (d.Z(i, zl) - p.bz.m[zl]) / p.bz.s[zl] * ri;
          V[l] += g * g;
        }
      }
      double vmax = qa > 0 ? V.maxCoeff() : 0.0;
      if (vmax <= 0.0)
        V.setOnes();
      else
        V = V.cwiseMax(1e-12 * vmax);
      Eigen::VectorXd vis = V.cwiseSqrt().cwiseInverse();
      Eigen::MatrixXd A2 = vis.asDiagonal() * A;
      Eigen::VectorXd b2 = vis.cwiseProduct(b);
      Eigen::MatrixXd H2 = A2.transpose() * A2;
      H2.diagonal().array() += lambda;
      tilde = pcg_spd(H2, A2.transpose() * b2, "gmm");
      out.objective = (b2 - A2 * tilde).squaredNorm();
    } else {
      out.objective = (b - A * tilde).squaredNorm();
    }
  }

  double dot = 0.0;
  for (Eigen::Index j = 0; j < pa; ++j) {
    Eigen::Index xj = xi[static_cast<std::size_t>(j)];
    out.delta_full[xj] = tilde[j] / p.bx.s[xj];
    dot += out.delta_full[xj] * p.bx.m[xj];
  }
  if (d.x_intercept != kNone)
    out.delta_full[static_cast<Eigen::Index>(d.x_intercept)] = (rbar - dot) / mi;
  return out;
}

bool has_positive_row(const DesignMatrices& d) {
  for (Eigen::Index i = 0; i < d.y.size(); ++i)
    if (d.w[i] > 0.0 && d.y[i] > 0.0) return true;
  return false;
}

// Grid selection: strictly better wins; exact ties prefer the larger lambda.
template <typename Score>
std::size_t select_lambda(const std::vector<double>& grid, Score&& score) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t pick = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    check_lambda(grid[i], "lambda grid entry");
    double v = score(i);
    if (v < best || (v == best && grid[i] > grid[pick])) {
      best = v;
      pick = i;
    }
  }
  return pick;
}

// Cheap counter-mode generator for per-user bootstrap weights: constructing a
// full mt19937 per (draw, user) would dominate the fit time.
struct MixRng {
  std::uint64_t state;
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~0ULL; }
  result_type operator()() { return splitmix64(state++); }
};

// One unit-mean Gamma(1/m^2, m^2) weight per user. The weight is a pure
// function of (seed, draw, user id), so repeated or out-of-order rows of one
// user always see the same weight.
Eigen::VectorXd gamma_user_weights(const DesignMatrices& d, std::uint64_t seed, std::uint64_t tag,
                                   std::size_t draw, double m2) {
  Eigen::VectorXd out = d.w;
  double weight = 1.0;
  for (std::size_t i = 0; i < d.user_ids.size(); ++i) {
    if (i == 0 || d.user_ids[i] != d.user_ids[i - 1]) {
      MixRng g{derive_seed(seed, tag, draw, fnv1a64(d.user_ids[i]))};
      weight = std::gamma_distribution<double>(1.0 / m2, m2)(g);
    }
    out[static_cast<Eigen::Index>(i)] *= weight;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void DesignMatrices::validate() const {
  const Eigen::Index n = X.rows();
  if (n == 0) throw DataError("design has no rows");
  if (y.size() != n || w.size() != n || static_cast<Eigen::Index>(user_ids.size()) != n)
    throw DataError("design row blocks have mismatched lengths");
  if (Z.cols() > 0 && Z.rows() != n) throw DataError("instrument block has mismatched rows");
  if (static_cast<Eigen::Index>(x_endogenous.size()) != X.cols())
    throw DataError("x_endogenous must flag every X column");
  if (!x_feature.empty() && static_cast<Eigen::Index>(x_feature.size()) != X.cols())
    throw DataError("x_feature must map every X column");
  if (!z_feature.empty() && static_cast<Eigen::Index>(z_feature.size()) != Z.cols())
    throw DataError("z_feature must map every Z column");
  if (x_intercept == kNone || static_cast<Eigen::Index>(x_intercept) >= X.cols())
    throw DataError("design must carry a valid intercept column");
  if (!X.allFinite() || !y.allFinite() || !w.allFinite() || (Z.size() > 0 && !Z.allFinite()))
    throw DataError("design contains non-finite values");
}

DesignMatrices build_design(const Panel& panel, const FeatureSet& keys) {
  keys.validate();
  auto icpt = keys.intercept_index();
  if (!icpt) throw ConfigError("feature set must declare the unit Baseline intercept column");
  if (panel.rows.empty()) throw DataError("empty panel");

  std::vector<int> xcols, zcols;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    switch (keys.keys[k].stock_class) {
      case StockClass::Baseline:
        xcols.push_back(static_cast<int>(k));
        zcols.push_back(static_cast<int>(k));
        break;
      case StockClass::AdStock:
      case StockClass::RetargetConjunction:
        xcols.push_back(static_cast<int>(k));
        break;
      case StockClass::PotentialAdStock:
      case StockClass::GhostBidStock:
        zcols.push_back(static_cast<int>(k));
        break;
    }
  }

  const Eigen::Index n = static_cast<Eigen::Index>(panel.rows.size());
  DesignMatrices d;
  d.X.resize(n, static_cast<Eigen::Index>(xcols.size()));
  d.Z.resize(n, static_cast<Eigen::Index>(zcols.size()));
  d.y.resize(n);
  d.w.resize(n);
  d.user_ids.resize(panel.rows.size());
  d.x_feature = xcols;
  d.z_feature = zcols;
  for (int k : xcols) {
    bool endog = keys.keys[static_cast<std::size_t>(k)].stock_class != StockClass::Baseline;
    d.x_endogenous.push_back(endog);
    if (static_cast<std::size_t>(k) == *icpt)
      d.x_intercept = d.x_endogenous.size() - 1;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const FeatureFrame& row = panel.rows[static_cast<std::size_t>(i)];
    if (row.columns.size() != keys.size())
      throw DataError("panel row has wrong column count for the feature set");
    for (std::size_t c = 0; c < xcols.size(); ++c)
      d.X(i, static_cast<Eigen::Index>(c)) = row.columns[static_cast<std::size_t>(xcols[c])];
    for (std::size_t c = 0; c < zcols.size(); ++c)
      d.Z(i, static_cast<Eigen::Index>(c)) = row.columns[static_cast<std::size_t>(zcols[c])];
    d.y[i] = row.y;
    d.w[i] = row.sample_weight;
    d.user_ids[static_cast<std::size_t>(i)] = row.user_id;
  }
  d.validate();
  return d;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid{0.0};
  for (int e = -4; e <= 4; ++e) grid.push_back(std::pow(10.0, e));
  grid.push_back(1e12);
  return grid;
}

Eigen::VectorXd fit_ridge(const DesignMatrices& design, double lambda) {
  design.validate();
  check_lambda(lambda, "lambda");
  BlockMoments b = block_moments(design.X, design.w, design.x_intercept);
  TargetMoments t = target_moments(design.X, design.w, design.y, b.sw);
  return ridge_beta(b, t, lambda, nullptr);
}

ControlFunctionFit control_function_2sls(const DesignMatrices& design, double lambda_v) {
  design.validate();
  check_lambda(lambda_v, "lambda_v");
  std::vector<Eigen::Index> endog;
  for (std::size_t j = 0; j < design.x_endogenous.size(); ++j)
    if (design.x_endogenous[j]) endog.push_back(static_cast<Eigen::Index>(j));

  ControlFunctionFit fit;
  if (endog.empty()) {
    fit.beta = fit_ridge(design, 0.0);
    fit.beta_vhat = Eigen::VectorXd(0);
    return fit;
  }
  if (design.Z.cols() == 0) throw DataError("under-identified: no instrument columns");

  IvProblem p = make_iv(design);
  std::size_t active_endog = 0;
  for (Eigen::Index e : endog)
    if (p.bx.active[static_cast<std::size_t>(e)]) ++active_endog;
  if (active_indices(p.bz).size() < active_endog)
    throw DataError("under-identified: fewer active instrument columns than endogenous regressors");

  // First stage: weighted OLS of each endogenous column on Z.
  const Eigen::Index n = design.X.rows();
  const Eigen::Index px = design.X.cols();
  const Eigen::Index ne = static_cast<Eigen::Index>(endog.size());
  Eigen::MatrixXd vhat(n, ne);
  for (Eigen::Index k = 0; k < ne; ++k) {
    Eigen::Index e = endog[static_cast<std::size_t>(k)];
    TargetMoments tx;
    tx.cy = p.gzx.col(e);
    tx.my = p.bx.m[e];
    tx.syy = p.bx.G(e, e);
    Eigen::VectorXd pi = ridge_beta(p.bz, tx, 0.0, nullptr);
    double pi0 = tx.my - pi.dot(p.bz.m);  // mean not carried by any Z column
    vhat.col(k) = design.X.col(e) - design.Z * pi;
    vhat.col(k).array() -= pi0;
  }

  // Second stage: y on [X, vhat], penalty only on the control columns.
  DesignMatrices aug;
  aug.X.resize(n, px + ne);
  aug.X.leftCols(px) = design.X;
  aug.X.rightCols(ne) = vhat;
  aug.y = design.y;
  aug.w = design.w;
  aug.user_ids = design.user_ids;
  aug.x_endogenous.assign(static_cast<std::size_t>(px + ne), false);
  aug.x_intercept = design.x_intercept;
  BlockMoments b2 = block_moments(aug.X, aug.w, aug.x_intercept);
  TargetMoments t2 = target_moments(aug.X, aug.w, aug.y, b2.sw);
  std::vector<double> penalty(static_cast<std::size_t>(px + ne), 0.0);
  for (Eigen::Index k = 0; k < ne; ++k) penalty[static_cast<std::size_t>(px + k)] = 1.0;
  Eigen::VectorXd beta2 = ridge_beta(b2, t2, lambda_v, &penalty);
  fit.beta = beta2.head(px);

  // The X rows of the augmented normal equations are never penalized, so
  // beta_plain - beta(lambda_v) = (X'WX)^{-1} J' (V'WV) gamma holds exactly at
  // every lambda_v. Reporting the control coefficients as that gap on the
  // endogenous coordinates fixes their basis: at lambda_v = 0 each one reads
  // as plain-WLS minus 2SLS for its column, and all decay to zero as the
  // penalty grows.
  TargetMoments ty;
  ty.cy = t2.cy.head(px);
  ty.my = t2.my;
  ty.syy = t2.syy;
  Eigen::VectorXd beta_plain = ridge_beta(p.bx, ty, 0.0, nullptr);
  fit.beta_vhat.resize(ne);
  for (Eigen::Index k = 0; k < ne; ++k) {
    Eigen::Index e = endog[static_cast<std::size_t>(k)];
    fit.beta_vhat[k] = beta_plain[e] - fit.beta[e];
  }
  return fit;
}

GmmFit gmm_iv(const DesignMatrices& design, double lambda, GmmWeighting weighting) {
  design.validate();
  check_lambda(lambda, "lambda");
  if (design.Z.cols() == 0) throw DataError("under-identified: no instrument columns");
  IvProblem p = make_iv(design);
  GmmStep step = gmm_step(p, Eigen::VectorXd::Zero(design.X.cols()), lambda, weighting);
  return GmmFit{step.delta_full, step.objective};
}

HausmanResult hausman_statistic(const Eigen::VectorXd& beta_iv, const Eigen::VectorXd& beta_ols,
                                const Eigen::MatrixXd& var_iv, const Eigen::MatrixXd& var_ols) {
  const Eigen::Index p = beta_iv.size();
  if (beta_ols.size() != p || var_iv.rows() != p || var_iv.cols() != p || var_ols.rows() != p ||
      var_ols.cols() != p)
    throw ConfigError("hausman inputs have mismatched dimensions");
  HausmanResult res;
  if (p == 0) return res;
  Eigen::MatrixXd diff = 0.5 * ((var_iv - var_ols) + (var_iv - var_ols).transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(diff);
  if (es.info() != Eigen::Success) throw NumericError("hausman eigendecomposition failed");
  const Eigen::VectorXd& vals = es.eigenvalues();
  double vmax = vals.cwiseAbs().maxCoeff();
  double tol = 1e-10 * std::max(vmax, 1e-300);
  Eigen::VectorXd d = beta_iv - beta_ols;
  for (Eigen::Index i = 0; i < p; ++i) {
    if (vals[i] > tol) {
      double proj = es.eigenvectors().col(i).dot(d);
      res.H += proj * proj / vals[i];
      ++res.dof;
    }
  }
  res.p_value = res.dof > 0 ? chi2_sf(res.H, static_cast<double>(res.dof)) : 1.0;
  return res;
}

HccFit fit_hcc(const DesignMatrices& design, const HccOptions& options,
               const DesignMatrices& holdout) {
  design.validate();
  holdout.validate();
  if (design.X.cols() != holdout.X.cols() || design.Z.cols() != holdout.Z.cols())
    throw ConfigError("train and holdout designs have different column layouts");
  if (options.ridge_grid.empty() || options.hcc_grid.empty())
    throw ConfigError("lambda grid must not be empty");
  if (!has_positive_row(design)) throw DataError("training design has no positive rows");
  if (!has_positive_row(holdout)) throw DataError("holdout design has no positive rows");

  IvProblem p = make_iv(design);
  BlockMoments hb = block_moments(holdout.X, holdout.w, holdout.x_intercept);
  TargetMoments ht = target_moments(holdout.X, holdout.w, holdout.y, hb.sw);

  // Correlational stage: lambda by holdout MSE.
  std::vector<Eigen::VectorXd> ridge_cache(options.ridge_grid.size());
  std::size_t ridge_pick = select_lambda(options.ridge_grid, [&](std::size_t i) {
    ridge_cache[i] = ridge_beta(p.bx, p.ty, options.ridge_grid[i], nullptr);
    return weighted_sse(hb, ht, ridge_cache[i]) / hb.sw;
  });

  HccFit fit;
  fit.lambda_ridge = options.ridge_grid[ridge_pick];
  fit.beta_corr = ridge_cache[ridge_pick];

  // Causal correction stage: lambda by the holdout instrument-moment norm,
  // instruments normalized by their training sd.
  Eigen::VectorXd h_czy = holdout.Z.transpose() * holdout.w.cwiseProduct(holdout.y).eval();
  Eigen::MatrixXd h_gzx = holdout.Z.transpose() * (holdout.w.asDiagonal() * holdout.X);
  auto moment_norm = [&](const Eigen::VectorXd& beta_total) {
    Eigen::VectorXd g = h_czy - h_gzx * beta_total;
    double j = 0.0;
    for (Eigen::Index l = 0; l < g.size(); ++l) {
      double gl = g[l] / p.bz.s[l];
      j += gl * gl;
    }
    return j;
  };
  std::vector<GmmStep> hcc_cache(options.hcc_grid.size());
  std::size_t hcc_pick = select_lambda(options.hcc_grid, [&](std::size_t i) {
    hcc_cache[i] = gmm_step(p, fit.beta_corr, options.hcc_grid[i], options.weighting);
    return moment_norm(fit.beta_corr + hcc_cache[i].delta_full);
  });

  fit.lambda_hcc = options.hcc_grid[hcc_pick];
  fit.delta_hcc = hcc_cache[hcc_pick].delta_full;
  fit.gmm_objective = hcc_cache[hcc_pick].objective;
  fit.delta_iv0 = gmm_step(p, fit.beta_corr, 0.0, options.weighting).delta_full;
  fit.beta = fit.beta_corr + fit.delta_hcc;

  double sst = p.ty.syy - p.bx.sw * p.ty.my * p.ty.my;
  fit.r_squared = sst > 0.0 ? 1.0 - weighted_sse(p.bx, p.ty, fit.beta) / sst : 0.0;
  return fit;
}

BootstrapResult bayesian_bootstrap(const FitFunction& fit, const DesignMatrices& design,
                                   int n_draws, double variance_multiplier, std::uint64_t seed,
                                   int threads) {
  design.validate();
  if (n_draws < 2) throw ConfigError("n_draws must be at least 2");
  if (!(variance_multiplier >= 1.0) || !std::isfinite(variance_multiplier))
    throw ConfigError("variance_multiplier must be a finite real >= 1");
  const double m2 = variance_multiplier * variance_multiplier;
  const std::uint64_t tag = fnv1a64("bootstrap.user.weight");
  BootstrapResult out;
  out.draws.resize(static_cast<std::size_t>(n_draws));
  if (threads <= 1) {
    DesignMatrices local = design;
    for (std::size_t d = 0; d < static_cast<std::size_t>(n_draws); ++d) {
      local.w = gamma_user_weights(design, seed, tag, d, m2);
      out.draws[d] = fit(local);
    }
    return out;
  }
  parallel_for(static_cast<std::size_t>(n_draws), threads, [&](std::size_t d) {
    DesignMatrices local = design;
    local.w = gamma_user_weights(design, seed, tag, d, m2);
    out.draws[d] = fit(local);
  });
  return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> bootstrap_ci(const std::vector<Eigen::VectorXd>& draws,
                                                         double level) {
  if (draws.empty()) throw ConfigError("no bootstrap draws");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("interval level must be in (0, 1)");
  const Eigen::Index p = draws.front().size();
  const std::size_t k = draws.size();
  auto quantile = [&](std::vector<double>& v, double q) {
    std::sort(v.begin(), v.end());
    // Type-6 interpolation: plotting positions i/(k+1) are unbiased for the
    // CDF, so intervals built from a handful of draws keep nominal coverage
    // on average (type 7 would systematically undercover at small k).
    double h = (static_cast<double>(v.size()) + 1.0) * q;
    h = std::clamp(h, 1.0, static_cast<double>(v.size()));
    std::size_t lo = static_cast<std::size_t>(h);
    std::size_t hi = std::min(lo + 1, v.size());
    return v[lo - 1] + (h - static_cast<double>(lo)) * (v[hi - 1] - v[lo - 1]);
  };
  Eigen::VectorXd lo(p), hi(p);
  std::vector<double> vals(k);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < k; ++i) vals[i] = draws[i][j];
    std::vector<double> copy = vals;
    lo[j] = quantile(copy, (1.0 - level) / 2.0);
    copy = vals;
    hi[j] = quantile(copy, 1.0 - (1.0 - level) / 2.0);
  }
  return {lo, hi};
}

Eigen::MatrixXd draw_covariance(const std::vector<Eigen::VectorXd>& draws) {
  if (draws.empty()) throw ConfigError("no bootstrap draws");
  const Eigen::Index p = draws.front().size();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
  if (draws.size() < 2) return cov;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
  for (const auto& d : draws) mean += d;
  mean /= static_cast<double>(draws.size());
  for (const auto& d : draws) {
    Eigen::VectorXd c = d - mean;
    cov += c * c.transpose();
  }
  cov /= static_cast<double>(draws.size() - 1);
  return cov;
}

void CoefficientSet::validate() const {
  keys.validate();
  if (beta.size() != static_cast<Eigen::Index>(keys.size()))
    throw ConfigError("coefficient vector does not match the feature set");
  for (const auto& d : draws)
    if (d.size() != beta.size()) throw ConfigError("bootstrap draw does not match the feature set");
  if (!(lambda_ridge >= 0.0) || !(lambda_hcc >= 0.0))
    throw ConfigError("lambdas must be non-negative");
  if (!feature_config_hash.empty() && feature_config_hash != incr::feature_config_hash(keys))
    throw DataError("feature_config_hash does not match the declared keys");
}

CoefficientSet fit_pipeline(const Panel& panel, const FeatureSet& keys,
                            const PipelineOptions& options) {
  if (!(options.holdout_fraction > 0.0 && options.holdout_fraction < 1.0))
    throw ConfigError("holdout_fraction must be in (0, 1)");
  if (options.n_draws < 2) throw ConfigError("n_draws must be at least 2");
  PanelSplit split = split_panel(panel, options.holdout_fraction, options.seed);
  if (split.train.rows.empty() || split.holdout.rows.empty())
    throw DataError("holdout split left an empty side; too few users");
  DesignMatrices dt = build_design(split.train, keys);
  DesignMatrices dh = build_design(split.holdout, keys);
  HccFit point = fit_hcc(dt, options.hcc, dh);

  const Eigen::Index px = dt.X.cols();
  FitFunction triple = [&](const DesignMatrices& d) {
    IvProblem p = make_iv(d);
    Eigen::VectorXd corr = ridge_beta(p.bx, p.ty, point.lambda_ridge, nullptr);
    GmmStep chosen = gmm_step(p, corr, point.lambda_hcc, options.hcc.weighting);
    GmmStep raw_iv = gmm_step(p, corr, 0.0, options.hcc.weighting);
    Eigen::VectorXd out(3 * px);
    out << corr + chosen.delta_full, corr + raw_iv.delta_full, corr;
    return out;
  };
  BootstrapResult boot = bayesian_bootstrap(triple, dt, options.n_draws,
                                            options.variance_multiplier, options.seed,
                                            options.threads);

  std::vector<Eigen::VectorXd> hcc_draws, iv_draws, ols_draws;
  for (const auto& d : boot.draws) {
    hcc_draws.push_back(d.head(px));
    iv_draws.push_back(d.segment(px, px));
    ols_draws.push_back(d.tail(px));
  }

  std::vector<Eigen::Index> endog;
  for (std::size_t j = 0; j < dt.x_endogenous.size(); ++j)
    if (dt.x_endogenous[j]) endog.push_back(static_cast<Eigen::Index>(j));
  HausmanResult haus;
  if (!endog.empty()) {
    auto restrict_vec = [&](const Eigen::VectorXd& v) {
      Eigen::VectorXd r(static_cast<Eigen::Index>(endog.size()));
      for (std::size_t k = 0; k < endog.size(); ++k) r[static_cast<Eigen::Index>(k)] = v[endog[k]];
      return r;
    };
    std::vector<Eigen::VectorXd> iv_r, ols_r;
    for (std::size_t i = 0; i < iv_draws.size(); ++i) {
      iv_r.push_back(restrict_vec(iv_draws[i]));
      ols_r.push_back(restrict_vec(ols_draws[i]));
    }
    haus = hausman_statistic(restrict_vec(point.beta_corr + point.delta_iv0),
                             restrict_vec(point.beta_corr), draw_covariance(iv_r),
                             draw_covariance(ols_r));
  }

  auto expand = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd full = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(keys.size()));
    for (std::size_t c = 0; c < dt.x_feature.size(); ++c)
      full[dt.x_feature[c]] = v[static_cast<Eigen::Index>(c)];
    return full;
  };

  CoefficientSet set;
  set.keys = keys;
  set.beta = expand(point.beta);
  set.lambda_ridge = point.lambda_ridge;
  set.lambda_hcc = point.lambda_hcc;
  for (const auto& d : hcc_draws) set.draws.push_back(expand(d));
  set.diagnostics.r_squared = point.r_squared;
  set.diagnostics.gmm_objective = point.gmm_objective;
  set.diagnostics.hausman_H = haus.H;
  set.diagnostics.hausman_dof = haus.dof;
  set.diagnostics.hausman_p = haus.p_value;
  set.feature_config_hash = feature_config_hash(keys);
  set.validate();
  return set;
}

// ---------------------------------------------------------------------------
// JSON persistence.

namespace {

using json = nlohmann::ordered_json;

json kernel_to_json(const KernelSpec& k) {
  json j;
  j["family"] = k.family == KernelFamily::Exponential ? "Exponential" : "Gamma";
  j["tau"] = k.tau;
  j["k"] = k.shape_k;
  if (k.truncated()) j["truncation"] = k.truncation;
  return j;
}

KernelSpec kernel_from_json(const json& j) {
  KernelSpec k;
  std::string family = j.at("family").get<std::string>();
  std::string lower;
  for (char c : family) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "exponential" || lower == "exp")
    k.family = KernelFamily::Exponential;
  else if (lower == "gamma" || lower == "gam")
    k.family = KernelFamily::Gamma;
  else
    throw ConfigError("unknown kernel family: " + family);
  k.tau = j.at("tau").get<double>();
  if (j.contains("k") && !j["k"].is_null()) k.shape_k = j["k"].get<double>();
  if (j.contains("truncation") && !j["truncation"].is_null()) {
    if (j["truncation"].is_string()) {
      std::string t = j["truncation"].get<std::string>();
      if (t != "Infinite" && t != "inf") throw ConfigError("bad truncation value: " + t);
    } else {
      k.truncation = j["truncation"].get<double>();
    }
  }
  return k;
}

json fourier_to_json(const FourierSpec& f) {
  json j;
  j["S"] = f.period_S;
  j["n"] = f.order_n;
  j["a"] = f.phase_a;
  return j;
}

FourierSpec fourier_from_json(const json& j) {
  FourierSpec f;
  if (j.contains("S") && !j["S"].is_null()) f.period_S = j["S"].get<double>();
  if (j.contains("n") && !j["n"].is_null()) f.order_n = j["n"].get<int>();
  if (j.contains("a") && !j["a"].is_null()) f.phase_a = j["a"].get<int>();
  return f;
}

}  // namespace

nlohmann::ordered_json feature_key_to_json(const FeatureKey& k);
FeatureKey feature_key_from_json(const nlohmann::ordered_json& j);

nlohmann::ordered_json feature_key_to_json(const FeatureKey& k) {
  json j;
  j["stock_class"] = to_string(k.stock_class);
  j["characteristic"] = k.characteristic;
  if (k.stock_class != StockClass::Baseline) j["kernel"] = kernel_to_json(k.kernel);
  if (!k.fourier.plain() || k.stock_class != StockClass::Baseline)
    j["fourier"] = fourier_to_json(k.fourier);
  if (k.retarget_tau) j["retarget_tau"] = *k.retarget_tau;
  if (k.viewable) j["viewable"] = true;
  return j;
}

FeatureKey feature_key_from_json(const nlohmann::ordered_json& j) {
  FeatureKey k;
  std::string cls = j.at("stock_class").get<std::string>();
  auto parsed = stock_class_from_string(cls);
  if (!parsed) throw ConfigError("unknown stock_class: " + cls);
  k.stock_class = *parsed;
  if (j.contains("characteristic") && !j["characteristic"].is_null())
    k.characteristic = j["characteristic"].get<std::string>();
  if (j.contains("kernel") && !j["kernel"].is_null()) {
    k.kernel = kernel_from_json(j["kernel"]);
  } else if (k.stock_class != StockClass::Baseline) {
    throw ConfigError("feature key of class " + cls + " requires a kernel");
  }
  if (j.contains("fourier") && !j["fourier"].is_null()) k.fourier = fourier_from_json(j["fourier"]);
  if (j.contains("retarget_tau") && !j["retarget_tau"].is_null())
    k.retarget_tau = j["retarget_tau"].get<double>();
  if (j.contains("viewable") && !j["viewable"].is_null()) k.viewable = j["viewable"].get<bool>();
  k.validate();
  return k;
}

std::string coefficient_set_to_json(const CoefficientSet& set) {
  set.validate();
  json j;
  j["keys"] = json::array();
  for (const auto& k : set.keys.keys) j["keys"].push_back(feature_key_to_json(k));
  j["beta"] = json::array();
  for (Eigen::Index i = 0; i < set.beta.size(); ++i) j["beta"].push_back(set.beta[i]);
  j["lambda_ridge"] = set.lambda_ridge;
  j["lambda_hcc"] = set.lambda_hcc;
  j["draws"] = json::array();
  for (const auto& d : set.draws) {
    json row = json::array();
    for (Eigen::Index i = 0; i < d.size(); ++i) row.push_back(d[i]);
    j["draws"].push_back(std::move(row));
  }
  j["diagnostics"] = {{"r_squared", set.diagnostics.r_squared},
                      {"gmm_objective", set.diagnostics.gmm_objective},
                      {"hausman_H", set.diagnostics.hausman_H},
                      {"hausman_dof", set.diagnostics.hausman_dof},
                      {"hausman_p", set.diagnostics.hausman_p}};
  j["feature_config_hash"] = set.feature_config_hash.empty()
                                 ? feature_config_hash(set.keys)
                                 : set.feature_config_hash;
  return j.dump(1);
}

CoefficientSet coefficient_set_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw DataError(std::string("bad coefficient json: ") + e.what());
  }
  CoefficientSet set;
  try {
    for (const auto& jk : j.at("keys")) set.keys.keys.push_back(feature_key_from_json(jk));
    const auto& beta = j.at("beta");
    set.beta.resize(static_cast<Eigen::Index>(beta.size()));
    for (std::size_t i = 0; i < beta.size(); ++i)
      set.beta[static_cast<Eigen::Index>(i)] = beta[i].get<double>();
    set.lambda_ridge = j.value("lambda_ridge", 0.0);
    set.lambda_hcc = j.value("lambda_hcc", 0.0);
    if (j.contains("draws")) {
      for (const auto& row : j["draws"]) {
        Eigen::VectorXd d(static_cast<Eigen::Index>(row.size()));
        for (std::size_t i = 0; i < row.size(); ++i)
          d[static_cast<Eigen::Index>(i)] = row[i].get<double>();
        set.draws.push_back(std::move(d));
      }
    }
    if (j.contains("diagnostics")) {
      const auto& dg = j["diagnostics"];
      set.diagnostics.r_squared = dg.value("r_squared", 0.0);
      set.diagnostics.gmm_objective = dg.value("gmm_objective", 0.0);
      set.diagnostics.hausman_H = dg.value("hausman_H", 0.0);
      set.diagnostics.hausman_dof = dg.value("hausman_dof", 0);
      set.diagnostics.hausman_p = dg.value("hausman_p", 1.0);
    }
    set.feature_config_hash = j.value("feature_config_hash", std::string());
  } catch (const json::exception& e) {
    throw DataError(std::string("bad coefficient json: ") + e.what());
  }
  set.validate();
  return set;
}

void save_coefficient_set(const CoefficientSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + path);
  out << coefficient_set_to_json(set) << "\n";
  if (!out) throw DataError("write failed: " + path);
}

CoefficientSet load_coefficient_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return coefficient_set_from_json(ss.str());
}

}  // namespace incr
