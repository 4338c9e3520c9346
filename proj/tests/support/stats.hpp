#pragma once
// Test-only statistics helpers (KS uniformity test, moments, quantiles).
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace testsupport {

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance(const std::vector<double>& v) {
  if (v.size() < 2) throw std::runtime_error("variance: need >= 2 samples");
  double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double stddev(const std::vector<double>& v) { return std::sqrt(variance(v)); }

// Linear-interpolation quantile (R type 7).
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw std::runtime_error("quantile: empty");
  std::sort(v.begin(), v.end());
  double h = (static_cast<double>(v.size()) - 1.0) * p;
  size_t lo = static_cast<size_t>(std::floor(h));
  size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - lo) * (v[hi] - v[lo]);
}

// One-sample KS test against U(0,1); asymptotic p-value.
inline double ks_uniform_pvalue(std::vector<double> u) {
  size_t n = u.size();
  if (n == 0) throw std::runtime_error("ks: empty sample");
  std::sort(u.begin(), u.end());
  double d = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double hi = (i + 1.0) / n - u[i];
    double lo = u[i] - static_cast<double>(i) / n;
    d = std::max({d, hi, lo});
  }
  double sn = std::sqrt(static_cast<double>(n));
  double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    double term = 2.0 * std::pow(-1.0, k - 1) * std::exp(-2.0 * k * k * lambda * lambda);
    p += term;
    if (std::fabs(term) < 1e-12) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace testsupport
