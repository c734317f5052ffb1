#include "dmse/trainer.hpp"

#include "dmse/dataio.hpp"
#include "dmse/parallel.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace dmse {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (!(adagrad_epsilon > 0.0)) throw InvalidArgument("adagrad_epsilon must be positive");
  if (minibatch_size < 1) throw InvalidArgument("minibatch_size must be positive");
  if (!(cdf_tol > 0.0)) throw InvalidArgument("cdf_tol must be positive");
  if (eval_every < 1) throw InvalidArgument("eval_every must be positive");
  if (shape.d1 < 1 || shape.d2 < 1) throw InvalidArgument("d1 and d2 must be positive");
  for (Index h : shape.hidden) {
    if (h < 1) throw InvalidArgument("hidden layer widths must be positive");
  }
  sampler.validate();
}

AdagradState AdagradState::zeros_like(const ModelParams& params) {
  AdagradState s;
  ModelParams copy = params;
  for (const auto& t : trainable_tensors(copy)) s.accum.push_back(Vector::Zero(t.size()));
  return s;
}

std::vector<Eigen::Map<Vector>> trainable_tensors(ModelParams& p) {
  std::vector<Eigen::Map<Vector>> out;
  auto add = [&](auto& m) { out.emplace_back(m.data(), m.size()); };
  add(p.S);
  add(p.lambda_raw);
  add(p.W);
  for (std::size_t k = 0; k < p.mlp.num_layers(); ++k) {
    add(p.mlp.weights[k]);
    add(p.mlp.biases[k]);
  }
  return out;
}

std::vector<Eigen::Map<const Vector>> gradient_tensors(const GradientBundle& b) {
  std::vector<Eigen::Map<const Vector>> out;
  auto add = [&](const auto& m) { out.emplace_back(m.data(), m.size()); };
  add(b.d_S);
  add(b.d_lambda_raw);
  add(b.d_W);
  for (std::size_t k = 0; k < b.d_mlp.num_layers(); ++k) {
    add(b.d_mlp.weights[k]);
    add(b.d_mlp.biases[k]);
  }
  return out;
}

bool adagrad_step(ModelParams& params, AdagradState& state, const GradientBundle& averaged,
                  const TrainConfig& cfg, Rng& rng) {
  if (!averaged.all_finite()) return false;
  auto tensors = trainable_tensors(params);
  const auto grads = gradient_tensors(averaged);
  if (tensors.size() != grads.size() || state.accum.size() != tensors.size()) {
    throw DimMismatch("gradient, state and parameters disagree");
  }
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    if (grads[t].size() != tensors[t].size()) throw DimMismatch("gradient tensor shape");
    state.accum[t].array() += grads[t].array().square();
    tensors[t].array() += cfg.learning_rate * grads[t].array() /
                          (state.accum[t].array().sqrt() + cfg.adagrad_epsilon);
  }
  for (Index j = 0; j < params.lambda_raw.cols(); ++j) {
    while (params.lambda_raw.col(j).norm() < 1e-10) {
      for (Index i = 0; i < params.lambda_raw.rows(); ++i) {
        params.lambda_raw(i, j) = 1e-3 * rng.uniform(-1.0, 1.0);
      }
    }
  }
  return true;
}

void write_record(std::ostream& os, const TrainingRecord& rec) {
  nlohmann::ordered_json j;
  j["step"] = rec.step;
  j["epoch"] = rec.epoch;
  j["minibatch_loglik"] = rec.minibatch_loglik;
  j["grad_se"] = rec.grad_se;
  j["wall_seconds"] = rec.wall_seconds;
  j["skipped"] = rec.skipped;
  if (rec.validation_loglik) j["validation_loglik"] = *rec.validation_loglik;
  os << j.dump() << '\n';
}

ModelParams initial_model(const Dataset& data, const TrainConfig& cfg) {
  ModelParams p = model_init(data.species_names, data.feature_names, cfg.shape,
                             derive_seed(cfg.seed, "init"));
  const FeatureStats stats = feature_stats(data);
  p.feature_mean = stats.mean;
  p.feature_scale = stats.scale;
  return p;
}

TrainResult train(const Dataset& data, const TrainConfig& cfg, const Dataset* validation,
                  const std::function<void(const TrainingRecord&)>& on_record) {
  cfg.validate();
  data.validate();
  if (data.empty()) throw InvalidArgument("training set is empty");
  if (cfg.minibatch_size > data.size()) {
    throw InvalidArgument("minibatch_size exceeds the number of observations");
  }
  if (validation) validation->validate();

  TrainResult result{initial_model(data, cfg), {}};
  ModelParams& params = result.params;
  AdagradState state = AdagradState::zeros_like(params);

  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng perturb_rng(derive_seed(cfg.seed, "perturb"));
  const std::uint64_t sampler_seed =
      derive_seed(derive_seed(cfg.seed, "sampler"), cfg.sampler.rng_seed);
  const std::uint64_t loglik_seed = derive_seed(cfg.seed, "loglik");

  const std::size_t n_obs = data.size();
  const std::size_t batch = cfg.minibatch_size;
  const std::size_t steps_per_epoch = (n_obs + batch - 1) / batch;
  const double n_species = static_cast<double>(params.n_species());
  std::vector<std::size_t> order(n_obs);
  std::iota(order.begin(), order.end(), std::size_t{0});

  const auto start = std::chrono::steady_clock::now();
  double best_validation = -std::numeric_limits<double>::infinity();
  std::size_t stale_evals = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n_obs; i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    std::size_t skipped_this_epoch = 0;
    bool stop = false;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::size_t first = s * batch;
      const std::size_t count = std::min(batch, n_obs - first);
      const auto sigma = CovarianceFactor::make(sigma_from_lambda(params.lambda_raw));
      const std::uint64_t step_seed = derive_seed(sampler_seed, step);
      const std::uint64_t step_ll_seed = derive_seed(loglik_seed, step);

      std::vector<ObservationGradient> grads(count);
      std::vector<double> loglik(count);
      parallel_for(count, cfg.threads, [&](std::size_t i) {
        const Observation& obs = data.observations[order[first + i]];
        SamplerConfig sc = cfg.sampler;
        sc.rng_seed = derive_seed(step_seed, i);
        grads[i] = observation_gradient(params, sigma, obs, sc);
        loglik[i] = log_likelihood_obs(params, sigma, obs, cfg.cdf_tol,
                                       derive_seed(step_ll_seed, i), cfg.log_cdf_max_samples)
                        .value;
      });

      GradientBundle total = GradientBundle::zeros_like(params);
      double ll_sum = 0.0;
      double se_sq = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        total += grads[i].bundle;
        ll_sum += loglik[i];
        se_sq += grads[i].d_mu_se.squaredNorm();
      }
      total *= 1.0 / static_cast<double>(count);

      TrainingRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.minibatch_loglik = ll_sum / static_cast<double>(count);
      rec.grad_se = std::sqrt(se_sq / n_species) / static_cast<double>(count);
      rec.skipped = !adagrad_step(params, state, total, cfg, perturb_rng);
      if (rec.skipped) {
        ++skipped_this_epoch;
        ++result.log.skipped_steps;
      }

      if (validation && !validation->empty() && (step + 1) % cfg.eval_every == 0) {
        const DatasetLogLikelihood v =
            log_likelihood_dataset(params, *validation, cfg.cdf_tol,
                                   derive_seed(cfg.seed, "validation"), cfg.threads);
        const double mean = v.total / static_cast<double>(validation->size());
        rec.validation_loglik = mean;
        if (mean > best_validation) {
          best_validation = mean;
          stale_evals = 0;
        } else if (cfg.patience > 0 && ++stale_evals >= cfg.patience) {
          stop = true;
        }
      }
      rec.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (on_record) on_record(rec);
      result.log.records.push_back(rec);
      if (stop) break;
    }
    if (2 * skipped_this_epoch > steps_per_epoch) {
      throw TrainingAborted("more than half of the steps in epoch " + std::to_string(epoch) +
                            " had non-finite gradients");
    }
    if (stop) break;
  }
  return result;
}

std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2 || n < k) {
    throw InvalidArgument("invalid k for k-fold split: need 2 <= k <= N (k=" +
                          std::to_string(k) + ", N=" + std::to_string(n) + ")");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

  std::vector<Fold> folds(k);
  std::size_t begin = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= begin && i < begin + size) {
        folds[f].validation.push_back(perm[i]);
      } else {
        folds[f].train.push_back(perm[i]);
      }
    }
    begin += size;
  }
  return folds;
}

}  // namespace dmse
