// Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
// exits nonzero if any fails. Pass criterion numbers as arguments to run a
// subset.

#include "dmse/checkpoint.hpp"
#include "dmse/cli.hpp"
#include "dmse/dataio.hpp"
#include "dmse/evaluation.hpp"
#include "dmse/gradients.hpp"
#include "dmse/mlp.hpp"
#include "dmse/model.hpp"
#include "dmse/mvn.hpp"
#include "dmse/normal.hpp"
#include "dmse/rng.hpp"
#include "dmse/trainer.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

using namespace dmse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Matrix random_spd(Index n, Rng& rng) {
  const Matrix a = Matrix::NullaryExpr(n, n, [&] { return rng.uniform(-1, 1); });
  return a * a.transpose() + 0.3 * Matrix::Identity(n, n);
}

std::vector<std::uint8_t> bits_of(int mask, Index n) {
  std::vector<std::uint8_t> b(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) b[static_cast<std::size_t>(j)] = mask >> j & 1;
  return b;
}

// Every scalar of a bundle / parameter set, in the same order.
std::vector<double*> bundle_scalars(GradientBundle& g) {
  std::vector<double*> out;
  auto add = [&](auto& m) {
    for (Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  };
  add(g.d_S);
  add(g.d_lambda_raw);
  add(g.d_W);
  for (std::size_t k = 0; k < g.d_mlp.weights.size(); ++k) {
    add(g.d_mlp.weights[k]);
    add(g.d_mlp.biases[k]);
  }
  return out;
}

std::vector<double*> param_scalars(ModelParams& p) {
  std::vector<double*> out;
  auto add = [&](auto& m) {
    for (Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  };
  add(p.S);
  add(p.lambda_raw);
  add(p.W);
  for (std::size_t k = 0; k < p.mlp.weights.size(); ++k) {
    add(p.mlp.weights[k]);
    add(p.mlp.biases[k]);
  }
  return out;
}

// mu = S^T W l with the identity network and one unit feature.
ModelParams fixed_mu_model(const Vector& mu, const Matrix& lambda) {
  const Index n = mu.size();
  std::vector<std::string> sp;
  for (Index j = 0; j < n; ++j) sp.push_back("s" + std::to_string(j));
  ModelParams p = model_init(sp, {"one"}, ModelShape{1, lambda.rows(), {}}, 1);
  p.S = mu.transpose();
  p.W = Matrix::Ones(1, 1);
  p.lambda_raw = lambda;
  return p;
}

Outcome cdf_oracle() {
  Rng rng(101);
  double worst2 = 0.0, worst2_mean = 0.0;
  for (int i = 0; i < 25; ++i) {
    const Matrix cov = random_spd(2, rng);
    const double rho = cov(0, 1) / std::sqrt(cov(0, 0) * cov(1, 1));
    const Rectangle pos = Rectangle::from_presence(bits_of(3, 2));
    const CdfEstimate e = cdf_rectangle(MvnProblem(Vector::Zero(2), cov), pos, 1e-6, kDefaultCdfMaxSamples, i);
    worst2 = std::max(worst2, std::fabs(e.value - oracle::orthant2(rho)));
    // Nonzero means have no closed form; compare against quadrature.
    const Vector mu = Vector::NullaryExpr(2, [&] { return rng.uniform(-1.5, 1.5); });
    const CdfEstimate f = cdf_rectangle(MvnProblem(mu, cov), pos, 1e-6, kDefaultCdfMaxSamples, i);
    worst2_mean = std::max(worst2_mean, std::fabs(f.value - oracle::bivariate_positive(mu, cov)));
  }
  double worst3 = 0.0;
  for (int i = 0; i < 10; ++i) {
    const Matrix cov = random_spd(3, rng);
    const Vector mu = Vector::NullaryExpr(3, [&] { return rng.uniform(-1, 1); });
    const CdfEstimate e = cdf_rectangle(MvnProblem(mu, cov), Rectangle::from_presence(bits_of(7, 3)), 1e-6,
                                        kDefaultCdfMaxSamples, i);
    worst3 = std::max(worst3, std::fabs(e.value - oracle::trivariate_positive(mu, cov)));
  }
  return {worst2 <= 1e-5 && worst2_mean <= 1e-5 && worst3 <= 1e-5,
          fmt("n=2 max err %.2e (mean 0), %.2e (mean != 0); n=3 max err %.2e", worst2, worst2_mean, worst3)};
}

Outcome mu_sigma_gradients() {
  Rng rng(202);
  const double h = 1e-4;
  std::size_t checked = 0, bad = 0, analytic_bad = 0;
  double worst_z = 0.0;
  for (int i = 0; i < 10; ++i) {
    const Index n = 1 + i % 3;
    const Matrix cov = random_spd(n, rng);
    const Vector mu = Vector::NullaryExpr(n, [&] { return rng.uniform(-1, 1); });
    const Rectangle rect = Rectangle::from_presence(bits_of(static_cast<int>(rng.below(1u << n)), n));
    SamplerConfig cfg;
    cfg.n_samples = 100000;
    cfg.rng_seed = 7 + i;
    const MuSigmaGrad g = grad_mu_sigma(MvnProblem(mu, cov), rect, cfg);
    // Fixed seed and budget: the +h and -h evaluations share every lattice point.
    auto log_cdf = [&](const Vector& m, const Matrix& c) {
      return std::log(cdf_rectangle(MvnProblem(m, c), rect, 1e-14, std::int64_t{12} << 15, 99).value);
    };
    auto check = [&](double analytic, double se, double fd) {
      ++checked;
      const double z = std::fabs(analytic - fd) / se;
      worst_z = std::max(worst_z, z);
      if (!(z <= 3.0)) ++bad;
    };
    for (Index j = 0; j < n; ++j) {
      Vector up = mu, down = mu;
      up(j) += h;
      down(j) -= h;
      check(g.d_mu(j), g.d_mu_se(j), (log_cdf(up, cov) - log_cdf(down, cov)) / (2 * h));
    }
    for (Index j = 0; j < n; ++j) {
      for (Index t = j; t < n; ++t) {
        Matrix up = cov, down = cov;
        up(j, t) += h;
        down(j, t) -= h;
        if (j != t) {
          up(t, j) += h;
          down(t, j) -= h;
        }
        const double w = j == t ? 1.0 : 2.0;
        check(w * g.d_sigma(j, t), w * g.d_sigma_se(j, t), (log_cdf(mu, up) - log_cdf(mu, down)) / (2 * h));
      }
    }
    if (n == 1) {
      const double s = std::sqrt(cov(0, 0));
      const double z = mu(0) / s;
      const double exact = rect.lower(0) == 0.0 ? norm_pdf(z) / (s * norm_cdf(z)) : -norm_pdf(z) / (s * norm_sf(z));
      if (!(std::fabs(g.d_mu(0) - exact) <= 3.0 * g.d_mu_se(0))) ++analytic_bad;
    }
  }
  return {bad == 0 && analytic_bad == 0,
          fmt("%zu partials, %zu outside 3 SE (max |z| %.2f); univariate vs phi/Phi: %zu outside", checked, bad,
              worst_z, analytic_bad)};
}

Outcome end_to_end_gradients() {
  const std::vector<std::string> sp{"a", "b"}, ft{"x", "y", "z"};
  ModelParams p = model_init(sp, ft, ModelShape{4, 4, {5, 5, 3}}, 21);
  Rng rng(6);
  for (auto& b : p.mlp.biases) b = Vector::NullaryExpr(b.size(), [&] { return rng.uniform(-0.3, 0.3); });
  const Observation o{{1, 0}, Vector{{0.5, -0.8, 0.2}}};

  SamplerConfig cfg;
  cfg.n_samples = 100000;
  cfg.rng_seed = 44;
  const auto factor = CovarianceFactor::make(sigma_from_lambda(p.lambda_raw));
  const MuForward fwd = mu_forward(p, standardize_features(p, o.features));
  const MvnProblem problem(fwd.mu, factor);
  const Rectangle rect = Rectangle::from_presence(o.presence);

  const Index batches = 20;
  std::vector<GradientBundle> parts;
  for (const auto& b : grad_mu_sigma_batches(problem, rect, cfg, batches)) parts.push_back(assemble_bundle(p, b, fwd));
  GradientBundle mean = GradientBundle::zeros_like(p);
  for (const auto& b : parts) mean += b;
  mean *= 1.0 / static_cast<double>(batches);
  const std::vector<double*> g = bundle_scalars(mean);
  std::vector<double> se(g.size(), 0.0);
  for (auto& b : parts) {
    const std::vector<double*> v = bundle_scalars(b);
    for (std::size_t i = 0; i < g.size(); ++i) se[i] += (*v[i] - *g[i]) * (*v[i] - *g[i]);
  }
  for (double& s : se) s = std::sqrt(s / (batches * (batches - 1.0)));

  const std::vector<double*> theta = param_scalars(p);
  const double h = 1e-4;
  auto ll = [&] { return log_likelihood_obs(p, o, 1e-8, 3).value; };
  std::size_t bad = 0;
  double worst_z = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = *theta[i];
    *theta[i] = saved + h;
    const double up = ll();
    *theta[i] = saved - h;
    const double down = ll();
    *theta[i] = saved;
    const double z = std::fabs(*g[i] - (up - down) / (2 * h)) / se[i];
    worst_z = std::max(worst_z, z);
    if (!(z <= 3.0)) ++bad;
  }
  return {bad == 0, fmt("%zu parameters, %zu outside 3 SE (max |z| %.2f)", theta.size(), bad, worst_z)};
}

Vector loop_forward(const MlpParams& p, const Vector& x) {
  std::vector<double> cur(x.data(), x.data() + x.size());
  for (std::size_t k = 0; k < p.weights.size(); ++k) {
    const Matrix& w = p.weights[k];
    std::vector<double> next(static_cast<std::size_t>(w.rows()));
    for (Index i = 0; i < w.rows(); ++i) {
      double s = p.biases[k](i);
      for (Index j = 0; j < w.cols(); ++j) s += w(i, j) * cur[static_cast<std::size_t>(j)];
      next[static_cast<std::size_t>(i)] = k + 1 < p.weights.size() ? std::tanh(s) : s;
    }
    cur = std::move(next);
  }
  return Eigen::Map<Vector>(cur.data(), static_cast<Index>(cur.size()));
}

Outcome mlp_gradients() {
  Rng rng(2024);
  const double h = 1e-5;
  double worst = 0.0;
  auto rel = [](double a, double b) { return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8}); };
  for (int trial = 0; trial < 20; ++trial) {
    MlpParams q = mlp_init({4, 8, 8, 3}, 100 + trial);
    for (auto& b : q.biases) b = Vector::NullaryExpr(b.size(), [&] { return rng.uniform(-0.5, 0.5); });
    const Vector x = Vector::NullaryExpr(4, [&] { return rng.uniform(-1, 1); });
    const Vector go = Vector::NullaryExpr(3, [&] { return rng.uniform(-1, 1); });
    const MlpForward f = mlp_forward(q, x);
    MlpBackward g = mlp_backward(q, f.tape, Matrix(go));
    auto objective = [&](const Vector& in) { return go.dot(loop_forward(q, in)); };
    for (std::size_t k = 0; k < q.weights.size(); ++k) {
      for (auto [theta, grad] : {std::pair{&q.weights[k], &g.grad_params.weights[k]}}) {
        for (Index i = 0; i < theta->size(); ++i) {
          double& v = theta->data()[i];
          const double saved = v;
          v = saved + h;
          const double up = objective(x);
          v = saved - h;
          const double down = objective(x);
          v = saved;
          worst = std::max(worst, rel(grad->data()[i], (up - down) / (2 * h)));
        }
      }
      for (Index i = 0; i < q.biases[k].size(); ++i) {
        double& v = q.biases[k](i);
        const double saved = v;
        v = saved + h;
        const double up = objective(x);
        v = saved - h;
        const double down = objective(x);
        v = saved;
        worst = std::max(worst, rel(g.grad_params.biases[k](i), (up - down) / (2 * h)));
      }
    }
    for (Index i = 0; i < 4; ++i) {
      Vector xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      worst = std::max(worst, rel(g.grad_input(i, 0), (objective(xp) - objective(xm)) / (2 * h)));
    }
  }
  return {worst <= 1e-6, fmt("max relative error %.2e over 20 trials", worst)};
}

Outcome marginal_invariance() {
  Rng rng(505);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Index n = 2 + trial % 3;
    const Vector mu = Vector::NullaryExpr(n, [&] { return rng.uniform(-1, 1); });
    const ModelParams p = fixed_mu_model(mu, Matrix::NullaryExpr(n, n, [&] { return rng.uniform(-1, 1); }));
    Vector marginal = Vector::Zero(n);
    for (int mask = 0; mask < (1 << n); ++mask) {
      const std::vector<std::uint8_t> b = bits_of(mask, n);
      const double pr = std::exp(log_likelihood_obs(p, Observation{b, Vector::Ones(1)}, 1e-5, mask).value);
      for (Index j = 0; j < n; ++j)
        if (b[static_cast<std::size_t>(j)]) marginal(j) += pr;
    }
    for (Index j = 0; j < n; ++j) worst = std::max(worst, std::fabs(marginal(j) - norm_cdf(mu(j))));
  }
  return {worst <= 1e-4, fmt("max |sum - Phi(mu_j)| %.2e over 10 models, n in 2..4", worst)};
}

Matrix correlation2(double rho) {
  Matrix s(2, 2);
  s << 1.0, rho, rho, 1.0;
  return s;
}

TrainConfig synth_train_config(std::uint64_t seed, std::vector<Index> hidden) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.threads = 1;
  cfg.shape = ModelShape{4, 4, std::move(hidden)};
  cfg.epochs = 10;
  cfg.minibatch_size = 32;
  cfg.learning_rate = 0.05;
  cfg.sampler.n_samples = 128;
  cfg.sampler.burn_in_sweeps = 20;
  // Only the logged minibatch log-likelihood uses this budget.
  cfg.log_cdf_max_samples = 1536;
  return cfg;
}

Outcome correlation_recovery() {
  bool pass = true;
  std::string detail;
  for (double rho : {-0.7, 0.0, 0.7}) {
    SynthSpec spec;
    spec.n_species = 2;
    spec.m_features = 2;
    spec.n_obs = 5000;
    spec.true_sigma = correlation2(rho);
    spec.seed = 61;
    const SynthResult s = synth_generate(spec);
    // One linear layer: mu = S^T W (A l + c), linear with an intercept.
    const TrainResult r = train(s.data, synth_train_config(62, {4}));
    const double learned = sigma_from_lambda(r.params.lambda_raw)(0, 1);
    pass = pass && std::fabs(learned - rho) <= 0.15;
    detail += fmt("%s%+.1f -> %+.3f", detail.empty() ? "" : ", ", rho, learned);
  }
  return {pass, detail};
}

Outcome joint_beats_independent() {
  SynthSpec spec;
  spec.n_species = 2;
  spec.m_features = 2;
  spec.n_obs = 5000;
  spec.true_sigma = correlation2(0.7);
  spec.seed = 71;
  const Dataset all = synth_generate(spec).data;
  std::vector<std::size_t> tr(4000), va(1000);
  for (std::size_t i = 0; i < 4000; ++i) tr[i] = i;
  for (std::size_t i = 0; i < 1000; ++i) va[i] = 4000 + i;
  const Dataset train_set = all.select(tr), held_out = all.select(va);
  const TrainResult r = train(train_set, synth_train_config(72, {4}));
  const EvalReport rep = evaluate(r.params, held_out, 1e-6, 73, 1);
  const PairedGap gap = paired_gap(rep.per_obs_joint, rep.per_obs_independent);
  return {gap.mean > 0.01 && gap.p_value < 0.01,
          fmt("joint %.4f vs independent %.4f nats/obs, gap %.4f (se %.4f, p %.2g)", rep.joint_per_obs(),
              rep.independent_per_obs(), gap.mean, gap.std_error, gap.p_value)};
}

Outcome deep_beats_linear() {
  SynthSpec spec;
  spec.n_species = 3;
  spec.m_features = 2;
  spec.n_obs = 5000;
  spec.mu_map = MuMap::kXorRadial;
  spec.seed = 81;
  const Dataset all = synth_generate(spec).data;
  std::vector<std::size_t> tr(4000), va(1000);
  for (std::size_t i = 0; i < 4000; ++i) tr[i] = i;
  for (std::size_t i = 0; i < 1000; ++i) va[i] = 4000 + i;
  const Dataset train_set = all.select(tr), held_out = all.select(va);
  const TrainResult deep = train(train_set, synth_train_config(82, {16, 16, 8}));
  const TrainResult linear = train(train_set, synth_train_config(82, {}));
  const EvalReport a = evaluate(deep.params, held_out, 1e-4, 83, 1);
  const EvalReport b = evaluate(linear.params, held_out, 1e-4, 83, 1);
  const double diff = a.mean_auc.value_or(0.0) - b.mean_auc.value_or(1.0);
  return {diff >= 0.05, fmt("held-out mean AUC: network %.4f, identity %.4f, difference %.4f",
                            a.mean_auc.value_or(0.0), b.mean_auc.value_or(0.0), diff)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("dmse_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  SynthSpec spec;
  spec.n_species = 3;
  spec.n_obs = 300;
  spec.true_sigma = Matrix::Identity(3, 3);
  spec.true_sigma(0, 1) = spec.true_sigma(1, 0) = 0.5;
  spec.seed = 91;
  save_csv(synth_generate(spec).data, dir / "d.csv");
  std::ofstream(dir / "t.cfg") << "epochs = 3\nd1 = 4\nd2 = 4\nhidden = 8,4\nminibatch_size = 25\n"
                                  "n_samples = 64\nseed = 17\n";
  auto train_to = [&](const std::string& name) {
    std::ostringstream out, err;
    return cli::run({"train", "--data", (dir / "d.csv").string(), "--config", (dir / "t.cfg").string(), "--out",
                     (dir / name).string(), "--threads", "1"},
                    out, err);
  };
  const int c1 = train_to("a.bin"), c2 = train_to("b.bin");
  const std::string a = slurp(dir / "a.bin"), b = slurp(dir / "b.bin");
  const bool same = c1 == 0 && c2 == 0 && !a.empty() && a == b;
  const ModelParams loaded = load_checkpoint(dir / "a.bin");
  save_checkpoint(loaded, dir / "c.bin");
  const bool round_trip = slurp(dir / "c.bin") == a && serialize_checkpoint(parse_checkpoint(a)) == a;
  std::error_code ec;
  fs::remove_all(dir, ec);
  return {same && round_trip, fmt("two train runs identical: %s (%zu bytes); load/save round trip identical: %s",
                                  same ? "yes" : "no", a.size(), round_trip ? "yes" : "no")};
}

Outcome normalization() {
  Rng rng(1010);
  const double tol = 1e-6;
  bool pass = true;
  double worst_ratio = 0.0;
  for (int trial = 0; trial < 12; ++trial) {
    const Index n = 1 + trial % 4;
    std::vector<std::string> sp, ft{"f1", "f2", "f3"};
    for (Index j = 0; j < n; ++j) sp.push_back("s" + std::to_string(j));
    ModelParams p = model_init(sp, ft, ModelShape{4, 4, {6, 4}}, 300 + trial);
    for (auto& b : p.mlp.biases) b = Vector::NullaryExpr(b.size(), [&] { return rng.uniform(-0.5, 0.5); });
    const Vector l = Vector::NullaryExpr(3, [&] { return rng.uniform(-1, 1); });
    double total = 0.0;
    for (int mask = 0; mask < (1 << n); ++mask) {
      total += std::exp(log_likelihood_obs(p, Observation{bits_of(mask, n), l}, tol, mask).value);
    }
    const double bound = 4.0 * tol * (1 << n);
    worst_ratio = std::max(worst_ratio, std::fabs(total - 1.0) / bound);
    pass = pass && std::fabs(total - 1.0) <= bound;
  }
  return {pass, fmt("12 models, n in 1..4: max |sum - 1| / (4 tol 2^n) = %.3f", worst_ratio)};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "mvn cdf against closed form and quadrature", 30, cdf_oracle},
      {2, "mean/covariance gradients against finite differences", 120, mu_sigma_gradients},
      {3, "model parameter gradients against finite differences", 120, end_to_end_gradients},
      {4, "network gradients against central differences", 5, mlp_gradients},
      {5, "marginal invariance", 30, marginal_invariance},
      {6, "correlation recovery", 600, correlation_recovery},
      {7, "joint beats independent on held-out data", 600, joint_beats_independent},
      {8, "network beats identity embedding on held-out AUC", 600, deep_beats_linear},
      {9, "determinism and checkpoint round trip", 60, determinism},
      {10, "pattern probabilities sum to one", 60, normalization},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.limit_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << ": " << o.detail
              << fmt(" [%.1f s, limit %.0f s%s]", secs, c.limit_seconds, in_time ? "" : ", over time") << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
  return failures == 0 ? 0 : 1;
}
