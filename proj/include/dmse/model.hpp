#pragma once

// The multi-species embedding model: species habitat embeddings S, species
// interaction embeddings Lambda, projection W and the covariate network.
//
//   mu(l)  = S^T (W * DNN(l))
//   Sigma  = Lhat^T Lhat,  Lhat = Lambda with unit-norm columns
//   Pr(b | l) = Pr(r in rect(b)),  r ~ N(mu(l), Sigma)

#include "dmse/core.hpp"
#include "dmse/dataset.hpp"
#include "dmse/mlp.hpp"
#include "dmse/mvn.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace dmse {

struct ModelParams {
  std::vector<std::string> species_names;
  std::vector<std::string> feature_names;
  Matrix S;           // d1 x n
  Matrix lambda_raw;  // d2 x n
  Matrix W;           // d1 x n_output
  MlpParams mlp;
  Vector feature_mean;   // m
  Vector feature_scale;  // m, population std (1 for constant features)

  Index n_species() const { return S.cols(); }
  Index n_features() const { return mlp.input_dim(); }
  Index d1() const { return S.rows(); }
  Index d2() const { return lambda_raw.rows(); }

  /// Throws DimMismatch when the tensors disagree.
  void validate() const;
};

struct ModelShape {
  Index d1 = 100;
  Index d2 = 100;
  /// Hidden and output widths of the covariate network; empty means the
  /// network is the identity and h = W * l.
  std::vector<Index> hidden = kDefaultHiddenDims;
};

/// Seeded uniform fan-based initialization for every tensor. Feature
/// standardization starts as the identity transform.
ModelParams model_init(std::vector<std::string> species_names,
                       std::vector<std::string> feature_names, const ModelShape& shape,
                       std::uint64_t seed);

/// Normalize columns to unit length and take the Gram matrix. The diagonal
/// is exactly one and off-diagonals are clamped to |rho| <= 1 - 1e-12.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> sigma_from_lambda(
    const Eigen::MatrixBase<Derived>& lambda_raw) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Array<Scalar, 1, Eigen::Dynamic> norms = lambda_raw.colwise().norm().array();
  for (Index j = 0; j < norms.size(); ++j) {
    if (!(norms(j) > Scalar(0))) {
      throw ZeroColumn("interaction embedding column " + std::to_string(j) + " is zero");
    }
  }
  const Mat unit = lambda_raw.array().rowwise() / norms;
  Mat sigma = unit.transpose() * unit;
  const Scalar cap = Scalar(1) - Scalar(1e-12);
  sigma = sigma.cwiseMax(-cap).cwiseMin(cap);
  sigma.diagonal().setOnes();
  return sigma;
}

/// lambda_raw with unit-norm columns.
Matrix normalized_columns(const Matrix& lambda_raw);

/// Apply the recorded z-score transform to raw covariates.
Vector standardize_features(const ModelParams& params, const Vector& raw);

struct MuForward {
  Vector mu;       // n
  Vector h;        // d1, environment embedding
  MlpTape tape;    // network intermediates; tape.output() is DNN(l)
};

/// Forward map on already standardized covariates.
MuForward mu_forward(const ModelParams& params, const Vector& standardized);

/// Phi(mu_j) for every species, from raw covariates.
Vector predict_marginal(const ModelParams& params, const Vector& raw_features);

struct LogLikelihood {
  double value = 0.0;
  double error_estimate = 0.0;  // on the probability scale
  bool converged = true;
};

/// log Pr(b | l) from raw covariates.
LogLikelihood log_likelihood_obs(const ModelParams& params, const Observation& obs,
                                 double tol, std::uint64_t seed,
                                 std::int64_t max_samples = kDefaultCdfMaxSamples);

/// Same, with the correlation factor already computed.
LogLikelihood log_likelihood_obs(const ModelParams& params,
                                 const std::shared_ptr<const CovarianceFactor>& sigma,
                                 const Observation& obs, double tol, std::uint64_t seed,
                                 std::int64_t max_samples = kDefaultCdfMaxSamples);

struct DatasetLogLikelihood {
  double total = 0.0;
  std::vector<double> per_obs;
  std::size_t unconverged = 0;
};

/// Sum over observations; observation i uses seed derive_seed(seed, i).
DatasetLogLikelihood log_likelihood_dataset(const ModelParams& params, const Dataset& data,
                                            double tol, std::uint64_t seed,
                                            unsigned threads = 0,
                                            std::int64_t max_samples = kDefaultCdfMaxSamples);

/// Throws DimMismatch naming the first species or feature that does not
/// line up with the model.
void check_compatible(const ModelParams& params, const Dataset& data);

}  // namespace dmse
