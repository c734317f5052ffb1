#pragma once

// Monte-Carlo gradients of log Pr(b | l).
//
// With f the N(mu, Sigma) density and Q the rectangle of b,
//   d log P / d mu    = E[ Sigma^-1 (x - mu) ]
//   d log P / d Sigma = E[ -1/2 (Sigma^-1 - Sigma^-1 (x - mu)(x - mu)^T Sigma^-1) ]
// where x follows f restricted to Q. Expectations are sample means over
// Gibbs draws; the chain rule then carries them to S, Lambda, W and the
// network weights.

#include "dmse/core.hpp"
#include "dmse/dataset.hpp"
#include "dmse/mlp.hpp"
#include "dmse/model.hpp"
#include "dmse/mvn.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace dmse {

/// Sigma^-1 (x - mu).
template <typename DerivedQ, typename DerivedMu, typename DerivedX>
Eigen::Matrix<typename DerivedX::Scalar, Eigen::Dynamic, 1> score_F(
    const Eigen::MatrixBase<DerivedQ>& sigma_inv, const Eigen::MatrixBase<DerivedMu>& mu,
    const Eigen::MatrixBase<DerivedX>& x) {
  return sigma_inv * (x - mu);
}

/// -1/2 (Sigma^-1 - Sigma^-1 (x - mu)(x - mu)^T Sigma^-1), symmetrized.
template <typename DerivedQ, typename DerivedMu, typename DerivedX>
Eigen::Matrix<typename DerivedX::Scalar, Eigen::Dynamic, Eigen::Dynamic> score_G(
    const Eigen::MatrixBase<DerivedQ>& sigma_inv, const Eigen::MatrixBase<DerivedMu>& mu,
    const Eigen::MatrixBase<DerivedX>& x) {
  using Scalar = typename DerivedX::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> f = score_F(sigma_inv, mu, x);
  Mat g = Scalar(-0.5) * (sigma_inv - f * f.transpose());
  return Scalar(0.5) * (g + g.transpose());
}

struct MuSigmaGrad {
  Vector d_mu;
  Matrix d_sigma;  // symmetric; entries are partials w.r.t. independent Sigma_jt
  /// Batch-means standard errors of the entries above.
  Vector d_mu_se;
  Matrix d_sigma_se;
};

inline constexpr Index kDefaultSeBatches = 16;

/// Clips rect at cfg.cutoff_k, draws cfg.n_samples truncated samples and
/// averages F and G over the same draws.
MuSigmaGrad grad_mu_sigma(const MvnProblem& problem, const Rectangle& rect,
                          const SamplerConfig& cfg, Index se_batches = kDefaultSeBatches);

/// The same estimate split into contiguous batches of the chain; entry k is
/// the mean over batch k (standard errors left empty). The plain average of
/// the batches equals grad_mu_sigma when n_samples divides evenly.
std::vector<MuSigmaGrad> grad_mu_sigma_batches(const MvnProblem& problem,
                                               const Rectangle& rect,
                                               const SamplerConfig& cfg, Index batches);

/// Gradient with respect to every trainable tensor.
struct GradientBundle {
  Matrix d_S;
  Matrix d_lambda_raw;
  Matrix d_W;
  MlpParams d_mlp;
  std::size_t n_obs = 0;

  static GradientBundle zeros_like(const ModelParams& params);
  GradientBundle& operator+=(const GradientBundle& other);
  GradientBundle& operator*=(double s);
  bool all_finite() const;
};

/// Chain rule from (d_mu, d_sigma) to the model tensors. The diagonal of
/// d_sigma is dropped (the diagonal of Sigma is fixed at one).
GradientBundle assemble_bundle(const ModelParams& params, const MuSigmaGrad& musig,
                               const MuForward& forward);

/// Backprop of d_sigma through Sigma = Lhat^T Lhat and the column normalization.
Matrix lambda_gradient(const Matrix& lambda_raw, const Matrix& d_sigma);

struct ObservationGradient {
  GradientBundle bundle;
  Vector d_mu_se;
};

/// Forward, sample, assemble for one observation (raw covariates).
ObservationGradient observation_gradient(const ModelParams& params,
                                         const std::shared_ptr<const CovarianceFactor>& sigma,
                                         const Observation& obs, const SamplerConfig& cfg);

}  // namespace dmse
