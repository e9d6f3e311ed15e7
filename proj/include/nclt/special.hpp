#pragma once

namespace nclt {

// Standard normal distribution function, abs error well under 1e-12
// across the real line (erfc-based so both tails stay accurate).
double std_normal_cdf(double x);

double std_normal_pdf(double x);

// Inverse of std_normal_cdf on (0, 1); rational initial guess polished
// with Newton steps to near machine precision.
double std_normal_quantile(double p);

// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
double gamma_p(double a, double x);

// Chi-square distribution function with k degrees of freedom.
double chi_square_cdf(double x, int k);

// Inverse chi-square distribution function on (0, 1).
double chi_square_quantile(double p, int k);

}  // namespace nclt
