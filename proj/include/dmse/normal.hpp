#pragma once

// Univariate standard normal primitives.

namespace dmse {

class Rng;

double norm_pdf(double x);
double norm_cdf(double x);
/// Upper tail 1 - Phi(x), accurate far into the right tail.
double norm_sf(double x);
double log_norm_cdf(double x);
/// Inverse of norm_cdf (Wichura's AS241, full double precision).
double norm_quantile(double p);

/// Probability mass of the standard normal on [lo, hi].
double norm_interval(double lo, double hi);

/// Point x in [lo, hi] with norm_interval(lo, x) = w * norm_interval(lo, hi).
/// Works from whichever tail keeps the arithmetic accurate.
double norm_interval_quantile(double lo, double hi, double w);

/// E[Z | lo <= Z <= hi] for standard normal Z.
double truncated_norm_mean(double lo, double hi);

/// Draw from N(mean, sd^2) restricted to the open interval (lo, hi).
/// Uses inverse-CDF sampling near the bulk and exponential/uniform rejection
/// when the whole interval lies more than 4 sd out in one tail.
double sample_truncated_normal(double mean, double sd, double lo, double hi, Rng& rng);

}  // namespace dmse
