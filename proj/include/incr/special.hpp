#pragma once
#include <complex>

namespace incr {

// Regularized incomplete gamma, real argument. P + Q = 1.
double reg_lower_gamma(double a, double x);
double reg_upper_gamma(double a, double x);

// Regularized upper incomplete gamma Q(a, z) = Gamma(a, z) / Gamma(a) for
// complex z with Re(z) >= 0 and real a > 0. Integer a uses the exact finite
// sum; otherwise a power series for small |z| and a continued fraction for
// large |z|.
std::complex<double> reg_upper_gamma_c(double a, std::complex<double> z);

// Survival function of chi-square with dof degrees of freedom.
double chi2_sf(double x, double dof);

// Standard normal CDF.
double norm_cdf(double x);

}  // namespace incr
