#include "dmse/normal.hpp"

#include "dmse/rng.hpp"

#include <cfloat>
#include <cmath>
#include <numbers>

namespace dmse {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014326779399461;
constexpr double kLogSqrt2Pi = 0.9189385332046727417803297;

// Robert (1995) one-sided tail sampler on [lo, hi] with lo >= 4.
double sample_right_tail(double lo, double hi, Rng& rng) {
  if (hi - lo < 1.0 / lo) {
    for (;;) {
      const double z = lo + (hi - lo) * rng.uniform();
      if (rng.uniform() <= std::exp(0.5 * (lo * lo - z * z))) return z;
    }
  }
  const double rate = 0.5 * (lo + std::sqrt(lo * lo + 4.0));
  for (;;) {
    const double z = lo + rng.exponential() / rate;
    if (z > hi) continue;
    const double d = z - rate;
    if (rng.uniform() <= std::exp(-0.5 * d * d)) return z;
  }
}

}  // namespace

double Rng::normal() { return norm_quantile(uniform()); }

double Rng::exponential() { return -std::log(uniform()); }

double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double norm_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double norm_sf(double x) { return 0.5 * std::erfc(x * std::numbers::sqrt2 / 2.0); }

double log_norm_cdf(double x) {
  if (x > 5.0) return std::log1p(-norm_sf(x));
  if (x > -37.0) return std::log(norm_cdf(x));
  // Asymptotic expansion of the Mills ratio.
  const double x2 = 1.0 / (x * x);
  const double series = 1.0 - x2 * (1.0 - 3.0 * x2 * (1.0 - 5.0 * x2));
  return -0.5 * x * x - kLogSqrt2Pi - std::log(-x) + std::log(series);
}

double norm_quantile(double p) {
  if (!(p > 0.0)) return -HUGE_VAL;
  if (!(p < 1.0)) return HUGE_VAL;
  const double q = p - 0.5;
  double r;
  double val;
  if (std::fabs(q) <= 0.425) {
    r = 0.180625 - q * q;
    val = q *
          (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r +
                67265.770927008700853) * r + 45921.953931549871457) * r +
              13731.693765509461125) * r + 1971.5909503065514427) * r +
            133.14166789178437745) * r + 3.387132872796366608) /
          (((((((r * 5226.495278852545925 + 28729.085735721942674) * r +
                39307.89580009271061) * r + 21213.794301586595867) * r +
              5394.1960214247511077) * r + 687.1870074920579083) * r +
            42.313330701600911252) * r + 1.0);
    return val;
  }
  r = q < 0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r +
                0.24178072517745061177) * r + 1.27045825245236838258) * r +
              3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r +
                0.0151986665636164571966) * r + 0.14810397642748007459) * r +
              0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r +
                0.0012426609473880784386) * r + 0.026532189526576123093) * r +
              0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r +
                1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r +
              0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

double norm_interval(double lo, double hi) {
  double p;
  if (lo > 0.0) {
    p = norm_sf(lo) - norm_sf(hi);
  } else if (hi < 0.0) {
    p = norm_cdf(hi) - norm_cdf(lo);
  } else {
    p = 1.0 - norm_cdf(lo) - norm_sf(hi);
  }
  return p > 0.0 ? p : 0.0;
}

double norm_interval_quantile(double lo, double hi, double w) {
  double x;
  const double p_lo = lo > 0.0 ? 0.5 : norm_cdf(lo);
  const double p = lo > 0.0 ? 1.0 : p_lo + w * (norm_cdf(hi) - p_lo);
  if (p <= 0.5) {
    x = p > 0.0 ? norm_quantile(p) : lo;
  } else {
    const double s_lo = norm_sf(lo);
    const double q = s_lo - w * (s_lo - norm_sf(hi));
    if (!(q > 0.0)) return lo;
    x = -norm_quantile(q);
  }
  if (x < lo) x = lo;
  if (x > hi) x = hi;
  return x;
}

double truncated_norm_mean(double lo, double hi) {
  const double mass = norm_interval(lo, hi);
  if (mass < 1e-300) {
    if (lo > 0.0) return lo;
    if (hi < 0.0) return hi;
    return 0.0;
  }
  const double f_lo = std::isfinite(lo) ? norm_pdf(lo) : 0.0;
  const double f_hi = std::isfinite(hi) ? norm_pdf(hi) : 0.0;
  double m = (f_lo - f_hi) / mass;
  if (m < lo) m = lo;
  if (m > hi) m = hi;
  return m;
}

double sample_truncated_normal(double mean, double sd, double lo, double hi, Rng& rng) {
  const double a = (lo - mean) / sd;
  const double b = (hi - mean) / sd;
  double z;
  if (a >= 4.0) {
    z = sample_right_tail(a, b, rng);
  } else if (b <= -4.0) {
    z = -sample_right_tail(-b, -a, rng);
  } else {
    z = norm_interval_quantile(a, b, rng.uniform());
  }
  double x = mean + sd * z;
  if (!(x > lo)) x = std::nextafter(lo, hi);
  if (!(x < hi)) x = std::nextafter(hi, lo);
  return x;
}

}  // namespace dmse
