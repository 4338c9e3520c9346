#include "incr/kernels.hpp"

#include <cmath>
#include <complex>

#include "incr/errors.hpp"
#include "incr/special.hpp"

namespace incr {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double omega(const FourierSpec& f) { return kTwoPi * f.order_n / f.period_S; }

// Per-phase combination of the closed-form trig x exponential integral:
// D_a(u) = (1/(1+(w*tau)^2)) * [a*(sin(wu)+wt*cos(wu)) + (1-a)*(cos(wu)-wt*sin(wu))].
double trig_exp_form(double a, double wt, double wu) {
  double s = std::sin(wu);
  double c = std::cos(wu);
  return (a * (s + wt * c) + (1.0 - a) * (c - wt * s)) / (1.0 + wt * wt);
}

void require_exponential(const KernelSpec& k, const char* op) {
  if (k.family != KernelFamily::Exponential)
    throw ConfigError(std::string(op) + ": unsupported kernel family (exponential required)");
}

void require_gamma(const KernelSpec& k, const char* op) {
  if (k.family != KernelFamily::Gamma)
    throw ConfigError(std::string(op) + ": unsupported kernel family (gamma required)");
}

// Finite truncation must hold a whole number of periods, otherwise the
// memoryless wrap-around used by the closed form breaks.
void require_period_divides(const KernelSpec& k, const FourierSpec& f, const char* op) {
  if (!k.truncated() || f.order_n == 0) return;
  double ratio = k.truncation / f.period_S;
  if (std::fabs(ratio - std::round(ratio)) > 1e-9)
    throw ConfigError(std::string(op) + ": period_S must divide truncation evenly");
}

KernelSpec composite_retarget_kernel(const KernelSpec& ad, const KernelSpec& ev,
                                     const char* op) {
  require_exponential(ad, op);
  require_exponential(ev, op);
  if (ad.truncated() || ev.truncated())
    throw ConfigError(std::string(op) + ": retarget conjunction requires untruncated kernels");
  KernelSpec k;
  k.family = KernelFamily::Exponential;
  k.tau = ad.tau * ev.tau / (ad.tau + ev.tau);
  return k;
}

}  // namespace

void KernelSpec::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("kernel: tau must be > 0");
  if (!(shape_k > 0.0) || !std::isfinite(shape_k))
    throw ConfigError("kernel: shape_k must be > 0");
  if (truncated() && !(truncation > 0.0))
    throw ConfigError("kernel: finite truncation must be > 0");
  if (family == KernelFamily::Exponential && shape_k != 1.0)
    throw ConfigError("kernel: exponential family has shape_k fixed at 1");
  if (family == KernelFamily::Gamma && truncated())
    throw ConfigError("kernel: gamma kernels are untruncated only");
}

void FourierSpec::validate() const {
  if (!(period_S > 0.0) || !std::isfinite(period_S))
    throw ConfigError("fourier: period_S must be > 0");
  if (order_n < 0) throw ConfigError("fourier: order_n must be >= 0");
  if (phase_a != 0 && phase_a != 1) throw ConfigError("fourier: phase_a must be 0 or 1");
  if (order_n == 0 && phase_a == 1)
    throw ConfigError("fourier: order 0 sine is identically zero; use phase_a=0");
}

DensityCdf density_and_cdf(const KernelSpec& kernel, double dt) {
  if (dt < 0.0) throw DomainError("density_and_cdf: negative dt (gate A_j belongs upstream)");
  if (kernel.family == KernelFamily::Exponential) {
    if (kernel.truncated() && dt >= kernel.truncation) return {0.0, 1.0};
    double norm = kernel.truncated() ? 1.0 - std::exp(-kernel.truncation / kernel.tau) : 1.0;
    double e = std::exp(-dt / kernel.tau);
    return {e / (kernel.tau * norm), (1.0 - e) / norm};
  }
  double k = kernel.shape_k;
  double x = dt / kernel.tau;
  double density;
  if (dt == 0.0) {
    density = k > 1.0 ? 0.0 : (k == 1.0 ? 1.0 / kernel.tau : kInfinite);
  } else {
    density = std::exp((k - 1.0) * std::log(dt) - x - std::lgamma(k) -
                       k * std::log(kernel.tau));
  }
  return {density, reg_lower_gamma(k, x)};
}

double peak_density(const KernelSpec& kernel) {
  if (kernel.family == KernelFamily::Exponential)
    return density_and_cdf(kernel, 0.0).density;
  if (kernel.shape_k < 1.0) return kInfinite;
  return density_and_cdf(kernel, (kernel.shape_k - 1.0) * kernel.tau).density;
}

double fourier_exponential_delta(const KernelSpec& kernel, const FourierSpec& fourier,
                                 double t_j) {
  require_exponential(kernel, "fourier_exponential_delta");
  require_period_divides(kernel, fourier, "fourier_exponential_delta");
  if (fourier.plain()) return 1.0;
  double w = omega(fourier);
  return trig_exp_form(fourier.phase_a, w * kernel.tau, w * t_j);
}

double fourier_exponential_residual(const KernelSpec& kernel, const FourierSpec& fourier,
                                    double t_j, double t) {
  require_exponential(kernel, "fourier_exponential_residual");
  require_period_divides(kernel, fourier, "fourier_exponential_residual");
  if (t < t_j) throw DomainError("fourier_exponential_residual: t < t_j");
  double x = t - t_j;
  if (kernel.truncated() && x >= kernel.truncation) return 0.0;
  double w = omega(fourier);
  double wt = w * kernel.tau;
  double a = fourier.phase_a;
  double head = std::exp(-x / kernel.tau) * trig_exp_form(a, wt, w * t);
  if (!kernel.truncated()) return head;
  double tail = std::exp(-kernel.truncation / kernel.tau);
  return (head - tail * trig_exp_form(a, wt, w * t_j)) / (1.0 - tail);
}

double gamma_fourier_delta(const KernelSpec& kernel, const FourierSpec& fourier,
                           double t_j) {
  return gamma_fourier_residual(kernel, fourier, t_j, t_j);
}

// Residual of the gamma x trig conjunction on [t, inf). Both F_a and F_{1-a}
// are sums of two conjugate products, so the imaginary parts cancel exactly;
// the residue assert guards the implementation, not rounding.
double gamma_fourier_residual(const KernelSpec& kernel, const FourierSpec& fourier,
                              double t_j, double t) {
  require_gamma(kernel, "gamma_fourier_residual");
  if (t < t_j) throw DomainError("gamma_fourier_residual: t < t_j");
  double k = kernel.shape_k;
  double x = (t - t_j) / kernel.tau;
  if (fourier.plain()) return reg_upper_gamma(k, x);

  double w = omega(fourier);
  double wt = w * kernel.tau;
  double phi = w * t_j;
  double s = std::sin(phi);
  double c = std::cos(phi);
  std::complex<double> i(0.0, 1.0);
  std::complex<double> m(1.0, -wt);  // 1 - i*w*tau
  std::complex<double> p(1.0, wt);   // 1 + i*w*tau
  std::complex<double> cm = std::pow(m, -k);
  std::complex<double> cp = std::pow(p, -k);
  std::complex<double> gm = reg_upper_gamma_c(k, x * m);
  std::complex<double> gp = reg_upper_gamma_c(k, x * p);

  std::complex<double> f_sin = (s - i * c) * cm * gm + (s + i * c) * cp * gp;
  std::complex<double> f_cos = (c - i * s) * cp * gp + (c + i * s) * cm * gm;
  std::complex<double> out = 0.5 * (double(fourier.phase_a) * f_sin +
                                    (1.0 - fourier.phase_a) * f_cos);
  if (std::fabs(out.imag()) > 1e-10)
    throw NumericError("gamma fourier integral: imaginary residue exceeds 1e-10");
  return out.real();
}

void validate_kernel_fourier(const KernelSpec& kernel, const FourierSpec& fourier) {
  kernel.validate();
  fourier.validate();
  require_period_divides(kernel, fourier, "validate_kernel_fourier");
}

double fourier_delta(const KernelSpec& kernel, const FourierSpec& fourier, double t_j) {
  if (kernel.family == KernelFamily::Exponential)
    return fourier_exponential_delta(kernel, fourier, t_j);
  return gamma_fourier_delta(kernel, fourier, t_j);
}

double fourier_residual(const KernelSpec& kernel, const FourierSpec& fourier, double t_j,
                        double t) {
  if (kernel.family == KernelFamily::Exponential)
    return fourier_exponential_residual(kernel, fourier, t_j, t);
  return gamma_fourier_residual(kernel, fourier, t_j, t);
}

double retarget_product_delta(const KernelSpec& ad_kernel, const KernelSpec& event_kernel,
                              double t_j, double t_r) {
  composite_retarget_kernel(ad_kernel, event_kernel, "retarget_product_delta");
  if (t_j < t_r) return 0.0;  // gate A_jr, not an error
  return std::exp(-(t_j - t_r) / event_kernel.tau) / (ad_kernel.tau + event_kernel.tau);
}

double retarget_product_residual(const KernelSpec& ad_kernel,
                                 const KernelSpec& event_kernel, double t_j, double t_r,
                                 double t) {
  double delta = retarget_product_delta(ad_kernel, event_kernel, t_j, t_r);
  if (delta == 0.0 || t <= t_j) return delta;
  return std::exp(-(t - t_j) / ad_kernel.tau - (t - t_r) / event_kernel.tau) /
         (ad_kernel.tau + event_kernel.tau);
}

double retarget_fourier_delta(const KernelSpec& ad_kernel, const KernelSpec& event_kernel,
                              const FourierSpec& fourier, double t_j, double t_r) {
  KernelSpec mix = composite_retarget_kernel(ad_kernel, event_kernel, "retarget_fourier_delta");
  double scale = retarget_product_delta(ad_kernel, event_kernel, t_j, t_r);
  if (scale == 0.0) return 0.0;
  return scale * fourier_exponential_delta(mix, fourier, t_j);
}

double retarget_fourier_residual(const KernelSpec& ad_kernel,
                                 const KernelSpec& event_kernel, const FourierSpec& fourier,
                                 double t_j, double t_r, double t) {
  KernelSpec mix =
      composite_retarget_kernel(ad_kernel, event_kernel, "retarget_fourier_residual");
  double scale = retarget_product_delta(ad_kernel, event_kernel, t_j, t_r);
  if (scale == 0.0) return 0.0;
  if (t <= t_j) return scale * fourier_exponential_delta(mix, fourier, t_j);
  return scale * fourier_exponential_residual(mix, fourier, t_j, t);
}

}  // namespace incr
