#pragma once
#include <limits>

namespace incr {

enum class KernelFamily { Exponential, Gamma };

constexpr double kInfinite = std::numeric_limits<double>::infinity();

// Ad-stock decay shape. Time unit is seconds everywhere.
struct KernelSpec {
  KernelFamily family = KernelFamily::Exponential;
  double tau = 1.0;         // scale
  double shape_k = 1.0;     // gamma shape; fixed 1 for exponential
  double truncation = kInfinite;

  bool truncated() const { return truncation != kInfinite; }
  void validate() const;  // throws ConfigError on a bad spec
};

// Periodic conjunction term: a=1 sine, a=0 cosine, of 2*pi*n*t/S.
// n=0 is a single constant feature (cosine branch).
struct FourierSpec {
  double period_S = 86400.0;
  int order_n = 0;
  int phase_a = 0;

  bool plain() const { return order_n == 0; }
  void validate() const;
};

struct DensityCdf {
  double density;
  double cdf;
};

// f(dt) and F(dt); truncated exponentials renormalize by 1/(1-exp(-T/tau)).
DensityCdf density_and_cdf(const KernelSpec& kernel, double dt);

// sup of the density over its support; infinite for gamma shape < 1.
double peak_density(const KernelSpec& kernel);

// Integral over [t_j, inf) of the kernel density placed at t_j times the
// Fourier term at absolute time t: the per-unit expected incremental value.
double fourier_exponential_delta(const KernelSpec& kernel, const FourierSpec& fourier,
                                 double t_j);
double gamma_fourier_delta(const KernelSpec& kernel, const FourierSpec& fourier,
                           double t_j);

// Remaining integral over [t, inf) (or [t, t_j+T] when truncated): the
// not-yet-dissipated part of the same conjunction.
double fourier_exponential_residual(const KernelSpec& kernel, const FourierSpec& fourier,
                                    double t_j, double t);
double gamma_fourier_residual(const KernelSpec& kernel, const FourierSpec& fourier,
                              double t_j, double t);

// Checks that the pair admits the closed-form integrals: both specs valid,
// and for a truncated kernel with order >= 1 the period divides the horizon.
void validate_kernel_fourier(const KernelSpec& kernel, const FourierSpec& fourier);

// Family dispatch used by feature evaluation.
double fourier_delta(const KernelSpec& kernel, const FourierSpec& fourier, double t_j);
double fourier_residual(const KernelSpec& kernel, const FourierSpec& fourier, double t_j,
                        double t);

// Retargeting conjunction (exponential x exponential only): integral of the
// ad-stock/event-stock product over [t_j, inf), zero unless t_j >= t_r.
double retarget_product_delta(const KernelSpec& ad_kernel, const KernelSpec& event_kernel,
                              double t_j, double t_r);
double retarget_product_residual(const KernelSpec& ad_kernel,
                                 const KernelSpec& event_kernel, double t_j, double t_r,
                                 double t);

// Fourier-conjoined retarget product via the composite scale
// tau~ = tau*tauR/(tau+tauR); order 0 reduces to the plain product.
double retarget_fourier_delta(const KernelSpec& ad_kernel, const KernelSpec& event_kernel,
                              const FourierSpec& fourier, double t_j, double t_r);
double retarget_fourier_residual(const KernelSpec& ad_kernel,
                                 const KernelSpec& event_kernel, const FourierSpec& fourier,
                                 double t_j, double t_r, double t);

}  // namespace incr
