#include "dmse/model.hpp"

#include "dmse/normal.hpp"
#include "dmse/parallel.hpp"
#include "dmse/rng.hpp"

#include <cmath>
#include <set>

namespace dmse {

namespace {

void fill_uniform(Matrix& m, Rng& rng) {
  const double r = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-r, r);
  }
}

}  // namespace

void ModelParams::validate() const {
  const Index n = S.cols();
  if (n < 1 || S.rows() < 1 || lambda_raw.rows() < 1) {
    throw DimMismatch("model needs at least one species and positive embedding sizes");
  }
  if (lambda_raw.cols() != n) throw DimMismatch("Lambda and S have different species counts");
  if (static_cast<Index>(species_names.size()) != n) {
    throw DimMismatch("species name table does not match S");
  }
  if (W.rows() != S.rows() || W.cols() != mlp.output_dim()) {
    throw DimMismatch("projection W does not match S and the network output");
  }
  const Index m = mlp.input_dim();
  if (static_cast<Index>(feature_names.size()) != m || feature_mean.size() != m ||
      feature_scale.size() != m) {
    throw DimMismatch("feature table does not match the network input");
  }
  for (std::size_t k = 0; k < mlp.num_layers(); ++k) {
    if (mlp.weights[k].rows() != mlp.layer_dims[k + 1] ||
        mlp.weights[k].cols() != mlp.layer_dims[k] ||
        mlp.biases[k].size() != mlp.layer_dims[k + 1]) {
      throw DimMismatch("network layer " + std::to_string(k) + " has inconsistent shape");
    }
  }
}

ModelParams model_init(std::vector<std::string> species_names,
                       std::vector<std::string> feature_names, const ModelShape& shape,
                       std::uint64_t seed) {
  const Index n = static_cast<Index>(species_names.size());
  const Index m = static_cast<Index>(feature_names.size());
  if (n < 1 || m < 1 || shape.d1 < 1 || shape.d2 < 1) {
    throw InvalidArgument("model dimensions must be positive");
  }
  std::vector<Index> dims{m};
  dims.insert(dims.end(), shape.hidden.begin(), shape.hidden.end());

  ModelParams p;
  p.species_names = std::move(species_names);
  p.feature_names = std::move(feature_names);
  p.mlp = mlp_init(dims, derive_seed(seed, "mlp"));
  p.S.resize(shape.d1, n);
  p.lambda_raw.resize(shape.d2, n);
  p.W.resize(shape.d1, p.mlp.output_dim());
  Rng rng(derive_seed(seed, "embeddings"));
  fill_uniform(p.S, rng);
  fill_uniform(p.lambda_raw, rng);
  fill_uniform(p.W, rng);
  for (Index j = 0; j < n; ++j) {
    while (p.lambda_raw.col(j).norm() < 1e-10) {
      for (Index i = 0; i < p.lambda_raw.rows(); ++i) p.lambda_raw(i, j) = rng.uniform(-1, 1);
    }
  }
  p.feature_mean = Vector::Zero(m);
  p.feature_scale = Vector::Ones(m);
  return p;
}

Matrix normalized_columns(const Matrix& lambda_raw) {
  return lambda_raw.array().rowwise() / lambda_raw.colwise().norm().array();
}

Vector standardize_features(const ModelParams& params, const Vector& raw) {
  if (raw.size() != params.n_features()) {
    throw DimMismatch("expected " + std::to_string(params.n_features()) +
                      " features, got " + std::to_string(raw.size()));
  }
  return (raw - params.feature_mean).cwiseQuotient(params.feature_scale);
}

MuForward mu_forward(const ModelParams& params, const Vector& standardized) {
  MuForward out;
  const Matrix z = mlp_forward(params.mlp, Matrix(standardized), &out.tape);
  out.h = params.W * z.col(0);
  out.mu = params.S.transpose() * out.h;
  return out;
}

Vector predict_marginal(const ModelParams& params, const Vector& raw_features) {
  const Vector mu = mu_forward(params, standardize_features(params, raw_features)).mu;
  return mu.unaryExpr([](double m) { return norm_cdf(m); });
}

LogLikelihood log_likelihood_obs(const ModelParams& params, const Observation& obs,
                                 double tol, std::uint64_t seed, std::int64_t max_samples) {
  return log_likelihood_obs(params, CovarianceFactor::make(sigma_from_lambda(params.lambda_raw)),
                            obs, tol, seed, max_samples);
}

LogLikelihood log_likelihood_obs(const ModelParams& params,
                                 const std::shared_ptr<const CovarianceFactor>& sigma,
                                 const Observation& obs, double tol, std::uint64_t seed,
                                 std::int64_t max_samples) {
  if (static_cast<Index>(obs.presence.size()) != params.n_species()) {
    throw DimMismatch("observation has " + std::to_string(obs.presence.size()) +
                      " species, model has " + std::to_string(params.n_species()));
  }
  const Vector mu = mu_forward(params, standardize_features(params, obs.features)).mu;
  const MvnProblem problem(mu, sigma);
  const CdfEstimate p =
      cdf_rectangle(problem, Rectangle::from_presence(obs.presence), tol, max_samples, seed);
  return {std::log(p.value), p.error_estimate, p.converged};
}

DatasetLogLikelihood log_likelihood_dataset(const ModelParams& params, const Dataset& data,
                                            double tol, std::uint64_t seed, unsigned threads,
                                            std::int64_t max_samples) {
  DatasetLogLikelihood out;
  out.per_obs.assign(data.size(), 0.0);
  if (data.empty()) return out;
  const auto sigma = CovarianceFactor::make(sigma_from_lambda(params.lambda_raw));
  std::vector<std::uint8_t> converged(data.size(), 1);
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const LogLikelihood ll = log_likelihood_obs(params, sigma, data.observations[i], tol,
                                                derive_seed(seed, i), max_samples);
    out.per_obs[i] = ll.value;
    converged[i] = ll.converged;
  });
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.total += out.per_obs[i];
    if (!converged[i]) ++out.unconverged;
  }
  return out;
}

void check_compatible(const ModelParams& params, const Dataset& data) {
  const std::set<std::string> have(data.species_names.begin(), data.species_names.end());
  for (const auto& s : params.species_names) {
    if (!have.count(s)) throw DimMismatch("species '" + s + "' is missing from the data");
  }
  if (data.species_names != params.species_names) {
    throw DimMismatch("species columns do not match the model's species table");
  }
  const std::set<std::string> feats(data.feature_names.begin(), data.feature_names.end());
  for (const auto& f : params.feature_names) {
    if (!feats.count(f)) throw DimMismatch("feature '" + f + "' is missing from the data");
  }
  if (data.feature_names != params.feature_names) {
    throw DimMismatch("feature columns do not match the model's feature table");
  }
}

}  // namespace dmse
