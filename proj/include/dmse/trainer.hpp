#pragma once

// Stochastic-gradient maximum likelihood with AdaGrad.

#include "dmse/core.hpp"
#include "dmse/dataset.hpp"
#include "dmse/gradients.hpp"
#include "dmse/model.hpp"
#include "dmse/mvn.hpp"
#include "dmse/rng.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

namespace dmse {

struct TrainConfig {
  double learning_rate = 0.05;
  double adagrad_epsilon = 1e-8;
  std::size_t minibatch_size = 32;
  std::size_t epochs = 30;
  SamplerConfig sampler;
  double cdf_tol = kDefaultCdfTol;
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;
  ModelShape shape;
  /// Stop after this many evaluations without validation improvement; 0 = off.
  std::size_t patience = 0;
  unsigned threads = 0;
  /// Integrand budget for the per-step minibatch log-likelihood estimate.
  std::int64_t log_cdf_max_samples = std::int64_t{12} << 10;

  void validate() const;
};

/// Squared-gradient accumulators, one per tensor in trainable_tensors order.
struct AdagradState {
  std::vector<Vector> accum;

  static AdagradState zeros_like(const ModelParams& params);
};

/// Flat views of every trainable tensor: S, Lambda, W, then each network
/// layer's weights and bias.
std::vector<Eigen::Map<Vector>> trainable_tensors(ModelParams& params);
std::vector<Eigen::Map<const Vector>> gradient_tensors(const GradientBundle& bundle);

/// One ascent step with a minibatch-averaged gradient. Returns false (and
/// leaves everything untouched) when the gradient is not finite. Raw Lambda
/// columns whose norm drops below 1e-10 are re-perturbed from rng.
bool adagrad_step(ModelParams& params, AdagradState& state, const GradientBundle& averaged,
                  const TrainConfig& cfg, Rng& rng);

struct TrainingRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double minibatch_loglik = 0.0;  // mean per observation
  double grad_se = 0.0;
  double wall_seconds = 0.0;
  bool skipped = false;
  std::optional<double> validation_loglik;  // mean per observation
};

void write_record(std::ostream& os, const TrainingRecord& rec);

struct TrainingLog {
  std::vector<TrainingRecord> records;
  std::size_t skipped_steps = 0;
};

struct TrainResult {
  ModelParams params;
  TrainingLog log;
};

struct TrainingAborted : Error {
  using Error::Error;
};

/// Model initialized from cfg.seed with feature standardization fitted to
/// data.
ModelParams initial_model(const Dataset& data, const TrainConfig& cfg);

/// epochs * ceil(N / minibatch) AdaGrad steps over seeded shuffles.
/// Evaluates mean validation log-likelihood every eval_every steps when a
/// validation set is given. Throws TrainingAborted when more than half of
/// an epoch's steps are skipped.
TrainResult train(const Dataset& data, const TrainConfig& cfg,
                  const Dataset* validation = nullptr,
                  const std::function<void(const TrainingRecord&)>& on_record = {});

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Seeded permutation cut into k near-equal blocks; fold i validates on
/// block i.
std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

}  // namespace dmse
