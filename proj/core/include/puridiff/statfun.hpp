#pragma once

namespace puridiff {

// standard normal CDF via erfc
double norm_cdf(double x);

// Inverse standard normal CDF (Wichura's AS241 rational approximations
// plus one Newton refinement); p clamped to [1e-300, 1 - 1e-16].
double norm_ppf(double p);

// Regularized incomplete beta I_x(a, b).
double incbeta(double a, double b, double x);

// One-sided exact (Clopper-Pearson style) lower confidence bound for a
// binomial proportion with k successes in n trials at level alpha.
double clopper_pearson_lower(int k, int n, double alpha);

}  // namespace puridiff
