#pragma once
// Test-only adaptive Gauss-Kronrod (G7-K15) integrator. Independent oracle for
// every closed-form kernel integral; never linked into the library.
#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <stdexcept>
#include <vector>

namespace testsupport {

struct GkCell {
  double a, b, integral, error;
  bool operator<(const GkCell& o) const { return error < o.error; }
};

inline GkCell gk15(const std::function<double(double)>& f, double a, double b) {
  static const double xgk[8] = {
      0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
      0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
      0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
      0.207784955007898467600689403773245, 0.0};
  static const double wgk[8] = {
      0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
      0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
      0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
      0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
  static const double wg[4] = {
      0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
      0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

  double c = 0.5 * (a + b);
  double h = 0.5 * (b - a);
  double fc = f(c);
  double resk = wgk[7] * fc;
  double resg = wg[3] * fc;
  for (int j = 0; j < 7; ++j) {
    double x = h * xgk[j];
    double fsum = f(c - x) + f(c + x);
    resk += wgk[j] * fsum;
    if (j % 2 == 1) resg += wg[(j - 1) / 2] * fsum;
  }
  return {a, b, resk * h, std::fabs((resk - resg) * h)};
}

// Adaptive bisection with optional pre-split points (period boundaries).
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol_abs = 1e-12, double tol_rel = 1e-10,
                        std::vector<double> breaks = {}) {
  if (!(b > a)) return 0.0;
  breaks.push_back(a);
  breaks.push_back(b);
  std::sort(breaks.begin(), breaks.end());
  std::priority_queue<GkCell> cells;
  double total = 0.0, err = 0.0;
  for (size_t i = 0; i + 1 < breaks.size(); ++i) {
    double lo = std::max(a, breaks[i]);
    double hi = std::min(b, breaks[i + 1]);
    if (hi <= lo) continue;
    GkCell cell = gk15(f, lo, hi);
    total += cell.integral;
    err += cell.error;
    cells.push(cell);
  }
  for (int iter = 0; iter < 200000 && !cells.empty(); ++iter) {
    if (err <= std::max(tol_abs, tol_rel * std::fabs(total))) return total;
    GkCell worst = cells.top();
    cells.pop();
    total -= worst.integral;
    err -= worst.error;
    double mid = 0.5 * (worst.a + worst.b);
    for (GkCell half : {gk15(f, worst.a, mid), gk15(f, mid, worst.b)}) {
      total += half.integral;
      err += half.error;
      cells.push(half);
    }
  }
  if (err > std::max(tol_abs * 10, tol_rel * 10 * std::fabs(total)))
    throw std::runtime_error("quadrature oracle failed to converge");
  return total;
}

// Break points at multiples of the period S, aligned to the origin, so each
// cell holds at most one oscillation.
inline std::vector<double> period_breaks(double a, double b, double S) {
  std::vector<double> out;
  if (!(S > 0.0) || !std::isfinite(S)) return out;
  double start = std::ceil(a / S) * S;
  for (double x = start; x < b; x += S) out.push_back(x);
  if (out.size() > 40000) throw std::runtime_error("period_breaks: too many cells");
  return out;
}

}  // namespace testsupport
