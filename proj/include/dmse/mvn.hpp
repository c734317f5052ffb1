#pragma once

// Multivariate normal primitives: factorization, density, rectangle
// probabilities and Gibbs sampling of the rectangle-truncated distribution.

#include "dmse/core.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <span>

namespace dmse {

/// Axis-aligned integration region; bounds may be +/-infinity.
struct Rectangle {
  Vector lower;
  Vector upper;

  Index size() const { return lower.size(); }

  /// b_j = 1 maps to (0, +inf), b_j = 0 to (-inf, 0).
  static Rectangle from_presence(std::span<const std::uint8_t> bits);
  static Rectangle whole_space(Index n);

  /// True when every coordinate lies in the open box.
  bool contains(const Vector& x) const;
  /// Throws InvalidArgument unless lower[j] < upper[j] for all j.
  void validate() const;
};

struct CholeskyResult {
  Matrix lower;
  bool jittered = false;
};

/// Lower Cholesky factor. On failure adds 1e-8 * mean(diag) * I once and
/// retries; throws NotPositiveDefinite if that fails too.
CholeskyResult cholesky(const Matrix& cov);

/// Covariance plus everything derived from it. Shared between all
/// observations of a minibatch since the correlation does not depend on
/// the covariates.
struct CovarianceFactor {
  Matrix cov;        // as given
  Matrix effective;  // cov plus jitter, if any; chol * chol^T
  Matrix chol;
  Matrix precision;
  double log_det = 0.0;
  bool jittered = false;

  static std::shared_ptr<const CovarianceFactor> make(const Matrix& cov);
};

class MvnProblem {
 public:
  MvnProblem(Vector mean, const Matrix& cov);
  MvnProblem(Vector mean, std::shared_ptr<const CovarianceFactor> factor);

  Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return factor_->cov; }
  const Matrix& chol() const { return factor_->chol; }
  const Matrix& precision() const { return factor_->precision; }
  bool jittered() const { return factor_->jittered; }
  const CovarianceFactor& factor() const { return *factor_; }
  const std::shared_ptr<const CovarianceFactor>& factor_ptr() const { return factor_; }

  double log_pdf(const Vector& x) const;
  double pdf(const Vector& x) const { return std::exp(log_pdf(x)); }

 private:
  Vector mean_;
  std::shared_ptr<const CovarianceFactor> factor_;
};

inline double mvn_log_pdf(const MvnProblem& problem, const Vector& x) { return problem.log_pdf(x); }
inline double mvn_pdf(const MvnProblem& problem, const Vector& x) { return problem.pdf(x); }

struct CdfEstimate {
  double value = 0.0;
  double error_estimate = 0.0;
  std::int64_t samples_used = 0;
  /// False when max_samples ran out before the tolerance was met.
  bool converged = true;
};

inline constexpr double kDefaultCdfTol = 1e-6;
inline constexpr std::int64_t kDefaultCdfMaxSamples = std::int64_t{12} << 16;

/// Pr(x in rect) for x ~ N(mean, cov).
///
/// Separation-of-variables transform onto the unit cube with the
/// Cholesky factor of the reordered covariance (most truncating coordinate
/// first), integrated by a randomly shifted Kronecker lattice with the
/// periodizing tent transform. Twelve independent shifts give the error
/// estimate (3 standard errors). The lattice size doubles until
/// error <= tol * value or max_samples integrand evaluations are spent.
CdfEstimate cdf_rectangle(const MvnProblem& problem, const Rectangle& rect,
                          double tol = kDefaultCdfTol,
                          std::int64_t max_samples = kDefaultCdfMaxSamples,
                          std::uint64_t seed = 0);

/// Upper bound on the standard normal mass beyond k standard deviations in
/// one tail: exp(-k^2/2) / (k sqrt(2 pi)).
template <typename Scalar>
Scalar truncation_bound(Scalar k) {
  using std::exp;
  using std::sqrt;
  return exp(-k * k / Scalar(2)) / (k * sqrt(Scalar(2) * std::numbers::pi_v<Scalar>));
}

struct ClippedRectangle {
  Rectangle rect;
  /// Set when a coordinate had to be widened beyond mean +/- k sd to stay
  /// nonempty.
  bool widened = false;
};

/// Intersect rect with mean +/- k * sqrt(diag(cov)).
ClippedRectangle clip_rectangle(const Rectangle& rect, const MvnProblem& problem, double k);

struct SamplerConfig {
  Index n_samples = 256;
  Index burn_in_sweeps = 50;
  Index thinning = 2;
  double cutoff_k = 5.0;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Systematic-scan Gibbs sampler for N(mean, cov) restricted to rect.
/// Returns an n x n_samples matrix, one draw per column. The rectangle is
/// used as given; clip it first for infinite bounds.
Matrix sample_truncated(const MvnProblem& problem, const Rectangle& rect,
                        const SamplerConfig& cfg);

}  // namespace dmse
