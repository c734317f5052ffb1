#include "dmse/gradients.hpp"

#include <algorithm>
#include <cmath>

namespace dmse {

namespace {

// Per-sample scores for the draws in columns [begin, end).
void accumulate_scores(const Matrix& q, const Vector& mu, const Matrix& draws, Index begin,
                       Index end, Vector& sum_f, Matrix& sum_ff) {
  const Matrix f = q * (draws.middleCols(begin, end - begin).colwise() - mu);
  sum_f = f.rowwise().sum();
  sum_ff.noalias() = f * f.transpose();
}

MuSigmaGrad from_sums(const Matrix& q, const Vector& sum_f, const Matrix& sum_ff, Index count) {
  const double inv = 1.0 / static_cast<double>(count);
  MuSigmaGrad g;
  g.d_mu = sum_f * inv;
  g.d_sigma = -0.5 * (q - sum_ff * inv);
  g.d_sigma = 0.5 * (g.d_sigma + g.d_sigma.transpose()).eval();
  return g;
}

Matrix draw(const MvnProblem& problem, const Rectangle& rect, const SamplerConfig& cfg) {
  const ClippedRectangle clipped = clip_rectangle(rect, problem, cfg.cutoff_k);
  return sample_truncated(problem, clipped.rect, cfg);
}

}  // namespace

std::vector<MuSigmaGrad> grad_mu_sigma_batches(const MvnProblem& problem,
                                               const Rectangle& rect,
                                               const SamplerConfig& cfg, Index batches) {
  if (batches < 1 || batches > cfg.n_samples) {
    throw InvalidArgument("batch count must be in [1, n_samples]");
  }
  const Matrix draws = draw(problem, rect, cfg);
  const Matrix& q = problem.precision();
  const Index n = problem.dim();
  std::vector<MuSigmaGrad> out;
  out.reserve(static_cast<std::size_t>(batches));
  Vector sum_f(n);
  Matrix sum_ff(n, n);
  for (Index b = 0; b < batches; ++b) {
    const Index begin = b * cfg.n_samples / batches;
    const Index end = (b + 1) * cfg.n_samples / batches;
    accumulate_scores(q, problem.mean(), draws, begin, end, sum_f, sum_ff);
    out.push_back(from_sums(q, sum_f, sum_ff, end - begin));
  }
  return out;
}

MuSigmaGrad grad_mu_sigma(const MvnProblem& problem, const Rectangle& rect,
                          const SamplerConfig& cfg, Index se_batches) {
  const Index n = problem.dim();
  const Index batches = std::min(se_batches, cfg.n_samples);
  const Matrix draws = draw(problem, rect, cfg);
  const Matrix& q = problem.precision();

  Vector total_f = Vector::Zero(n);
  Matrix total_ff = Matrix::Zero(n, n);
  std::vector<MuSigmaGrad> parts;
  Vector sum_f(n);
  Matrix sum_ff(n, n);
  for (Index b = 0; b < batches; ++b) {
    const Index begin = b * cfg.n_samples / batches;
    const Index end = (b + 1) * cfg.n_samples / batches;
    accumulate_scores(q, problem.mean(), draws, begin, end, sum_f, sum_ff);
    total_f += sum_f;
    total_ff += sum_ff;
    parts.push_back(from_sums(q, sum_f, sum_ff, end - begin));
  }
  MuSigmaGrad g = from_sums(q, total_f, total_ff, cfg.n_samples);

  g.d_mu_se = Vector::Zero(n);
  g.d_sigma_se = Matrix::Zero(n, n);
  if (batches > 1) {
    for (const auto& p : parts) {
      g.d_mu_se += (p.d_mu - g.d_mu).cwiseAbs2();
      g.d_sigma_se += (p.d_sigma - g.d_sigma).cwiseAbs2();
    }
    const double scale = 1.0 / (static_cast<double>(batches) * (batches - 1));
    g.d_mu_se = (g.d_mu_se * scale).cwiseSqrt();
    g.d_sigma_se = (g.d_sigma_se * scale).cwiseSqrt();
  }
  return g;
}

GradientBundle GradientBundle::zeros_like(const ModelParams& params) {
  return {Matrix::Zero(params.S.rows(), params.S.cols()),
          Matrix::Zero(params.lambda_raw.rows(), params.lambda_raw.cols()),
          Matrix::Zero(params.W.rows(), params.W.cols()),
          MlpParams::zeros(params.mlp.layer_dims), 0};
}

GradientBundle& GradientBundle::operator+=(const GradientBundle& other) {
  if (other.d_S.rows() != d_S.rows() || other.d_S.cols() != d_S.cols() ||
      other.d_lambda_raw.rows() != d_lambda_raw.rows() || other.d_W.cols() != d_W.cols()) {
    throw DimMismatch("gradient bundles have different shapes");
  }
  d_S += other.d_S;
  d_lambda_raw += other.d_lambda_raw;
  d_W += other.d_W;
  d_mlp += other.d_mlp;
  n_obs += other.n_obs;
  return *this;
}

GradientBundle& GradientBundle::operator*=(double s) {
  d_S *= s;
  d_lambda_raw *= s;
  d_W *= s;
  d_mlp *= s;
  return *this;
}

bool GradientBundle::all_finite() const {
  if (!d_S.allFinite() || !d_lambda_raw.allFinite() || !d_W.allFinite()) return false;
  for (std::size_t k = 0; k < d_mlp.num_layers(); ++k) {
    if (!d_mlp.weights[k].allFinite() || !d_mlp.biases[k].allFinite()) return false;
  }
  return true;
}

Matrix lambda_gradient(const Matrix& lambda_raw, const Matrix& d_sigma) {
  Matrix g = 0.5 * (d_sigma + d_sigma.transpose());
  g.diagonal().setZero();
  const Eigen::RowVectorXd norms = lambda_raw.colwise().norm();
  const Matrix unit = lambda_raw.array().rowwise() / norms.array();
  const Matrix d_unit = 2.0 * unit * g;
  // Project out the radial direction: d lambda = (I - u u^T) d u / |lambda|.
  const Eigen::RowVectorXd radial = unit.cwiseProduct(d_unit).colwise().sum();
  Matrix out = d_unit - unit * radial.asDiagonal();
  return out.array().rowwise() / norms.array();
}

GradientBundle assemble_bundle(const ModelParams& params, const MuSigmaGrad& musig,
                               const MuForward& forward) {
  if (musig.d_mu.size() != params.n_species() || forward.h.size() != params.d1()) {
    throw DimMismatch("gradient inputs do not match the model");
  }
  GradientBundle b;
  b.n_obs = 1;
  b.d_S = forward.h * musig.d_mu.transpose();
  const Vector d_h = params.S * musig.d_mu;
  b.d_W = d_h * forward.tape.output().col(0).transpose();
  const Vector d_out = params.W.transpose() * d_h;
  b.d_mlp = mlp_backward(params.mlp, forward.tape, d_out).grad_params;
  b.d_lambda_raw = lambda_gradient(params.lambda_raw, musig.d_sigma);
  return b;
}

ObservationGradient observation_gradient(const ModelParams& params,
                                         const std::shared_ptr<const CovarianceFactor>& sigma,
                                         const Observation& obs, const SamplerConfig& cfg) {
  if (static_cast<Index>(obs.presence.size()) != params.n_species()) {
    throw DimMismatch("observation does not match the model's species count");
  }
  const MuForward fwd = mu_forward(params, standardize_features(params, obs.features));
  const MvnProblem problem(fwd.mu, sigma);
  const MuSigmaGrad musig = grad_mu_sigma(problem, Rectangle::from_presence(obs.presence), cfg);
  return {assemble_bundle(params, musig, fwd), musig.d_mu_se};
}

}  // namespace dmse
