#include "dmse/cli.hpp"

#include "dmse/checkpoint.hpp"
#include "dmse/config.hpp"
#include "dmse/dataio.hpp"
#include "dmse/evaluation.hpp"
#include "dmse/model.hpp"
#include "dmse/mvn.hpp"
#include "dmse/normal.hpp"
#include "dmse/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>

namespace dmse::cli {

namespace {

namespace fs = std::filesystem;

/// Error carrying the exit code it maps to.
struct Failure {
  int code;
  std::string message;
};

[[noreturn]] void fail(int code, const std::string& message) { throw Failure{code, message}; }

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed3(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << (std::fabs(v) < 5e-4 ? 0.0 : v);
  return os.str();
}

TrainConfig load_train_config(const std::string& path) {
  try {
    return path.empty() ? train_config_from({}) : train_config_from(read_key_values(path));
  } catch (const ConfigError& e) {
    fail(kConfigError, e.what());
  }
}

Dataset load_data(const std::string& path) {
  try {
    Dataset d = load_csv(path);
    if (d.empty()) fail(kDataError, "'" + path + "' contains no observations");
    return d;
  } catch (const Error& e) {
    fail(kDataError, e.what());
  }
}

ModelParams load_model(const std::string& path) {
  try {
    return load_checkpoint(path);
  } catch (const Error& e) {
    fail(kDataError, e.what());
  }
}

void check_data_matches(const ModelParams& model, const Dataset& data) {
  try {
    check_compatible(model, data);
  } catch (const DimMismatch& e) {
    fail(kDataError, e.what());
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(kDataError, "cannot write '" + path.string() + "'");
  return out;
}

TrainResult run_training(const Dataset& data, const TrainConfig& cfg,
                         const Dataset* validation, std::ostream* log) {
  try {
    return train(data, cfg, validation, [&](const TrainingRecord& r) {
      if (log) write_record(*log, r);
    });
  } catch (const TrainingAborted& e) {
    fail(kTrainingAborted, e.what());
  } catch (const InvalidArgument& e) {
    fail(kConfigError, e.what());
  } catch (const Error& e) {
    fail(kTrainingAborted, e.what());
  }
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data, config, out, log, validation;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::size_t top_species = 0;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = load_train_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.threads) cfg.threads = *a.threads;
  Dataset data = load_data(a.data);
  if (a.top_species > 0) {
    if (a.top_species > data.species_names.size()) {
      fail(kConfigError, "--top-species exceeds the number of species in the data");
    }
    FilteredSpecies f = filter_top_species(data, a.top_species);
    out << "kept " << a.top_species << " species covering " << num(f.coverage)
        << " of presence records\n";
    data = std::move(f.data);
  }
  std::optional<Dataset> validation;
  if (!a.validation.empty()) {
    validation = load_data(a.validation);
    if (validation->species_names != data.species_names ||
        validation->feature_names != data.feature_names) {
      fail(kDataError, "validation columns do not match the training data");
    }
  }
  const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  std::ofstream log = open_out(log_path);
  const TrainResult result = run_training(data, cfg, validation ? &*validation : nullptr, &log);
  try {
    save_checkpoint(result.params, a.out);
  } catch (const Error& e) {
    fail(kDataError, e.what());
  }
  out << "trained " << result.log.records.size() << " steps (" << result.log.skipped_steps
      << " skipped); checkpoint written to " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string data, model, out;
  double tol = kDefaultCdfTol;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const ModelParams model = load_model(a.model);
  const Dataset data = load_data(a.data);
  check_data_matches(model, data);
  const EvalReport report = evaluate(model, data, a.tol, a.seed, a.threads);
  write_report_text(report, out);
  if (!a.out.empty()) {
    std::ofstream txt = open_out(a.out + ".txt");
    write_report_text(report, txt);
    std::ofstream csv = open_out(a.out + ".csv");
    write_report_csv(report, csv);
  }
  return kOk;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  std::string features, model, out;
  std::vector<std::string> patterns;
  double tol = kDefaultCdfTol;
  std::uint64_t seed = 0;
};

constexpr std::size_t kMaxPatternSpecies = 10;

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const ModelParams model = load_model(a.model);
  Dataset feats;
  try {
    std::ifstream in(a.features);
    if (!in) throw DataError("cannot open '" + a.features + "'");
    feats = parse_csv(in, kSpeciesPrefix, kFeaturePrefix, /*require_species=*/false);
  } catch (const Error& e) {
    fail(kDataError, e.what());
  }
  // Map the model's feature order onto the file's columns.
  std::vector<Index> column(model.feature_names.size());
  for (std::size_t k = 0; k < model.feature_names.size(); ++k) {
    const auto it =
        std::find(feats.feature_names.begin(), feats.feature_names.end(), model.feature_names[k]);
    if (it == feats.feature_names.end()) {
      fail(kDataError, "feature '" + model.feature_names[k] + "' is missing from the data");
    }
    column[k] = it - feats.feature_names.begin();
  }

  const Index n = model.n_species();
  struct Pattern {
    std::string text;
    std::vector<Index> idx;
    Rectangle rect;
    std::shared_ptr<const CovarianceFactor> sigma;
  };
  std::vector<Pattern> patterns;
  const Matrix sigma = sigma_from_lambda(model.lambda_raw);
  for (const auto& p : a.patterns) {
    if (static_cast<Index>(p.size()) != n) {
      fail(kDataError, "pattern '" + p + "' has length " + std::to_string(p.size()) +
                           ", model has " + std::to_string(n) + " species");
    }
    Pattern pat{p, {}, {}, nullptr};
    std::vector<std::uint8_t> bits;
    for (Index j = 0; j < n; ++j) {
      const char c = p[static_cast<std::size_t>(j)];
      if (c == '0' || c == '1') {
        pat.idx.push_back(j);
        bits.push_back(c == '1');
      } else if (c != 'x') {
        fail(kDataError, "pattern '" + p + "' may only contain '0', '1' and 'x'");
      }
    }
    if (pat.idx.empty() || pat.idx.size() > kMaxPatternSpecies) {
      fail(kDataError, "pattern '" + p + "' must fix between 1 and " +
                           std::to_string(kMaxPatternSpecies) + " species");
    }
    pat.rect = Rectangle::from_presence(bits);
    pat.sigma = CovarianceFactor::make(sigma(pat.idx, pat.idx));
    patterns.push_back(std::move(pat));
  }

  std::ofstream file = open_out(a.out);
  file << "row";
  for (const auto& s : model.species_names) file << ",p:" << s;
  for (const auto& p : patterns) file << ",joint:" << p.text;
  file << '\n';
  for (std::size_t i = 0; i < feats.size(); ++i) {
    Vector raw(model.n_features());
    for (std::size_t k = 0; k < column.size(); ++k) {
      raw(static_cast<Index>(k)) = feats.observations[i].features(column[k]);
    }
    const Vector mu = mu_forward(model, standardize_features(model, raw)).mu;
    file << i;
    for (Index j = 0; j < n; ++j) file << ',' << num(norm_cdf(mu(j)));
    for (const auto& p : patterns) {
      const MvnProblem problem(mu(p.idx), p.sigma);
      file << ',' << num(cdf_rectangle(problem, p.rect, a.tol, kDefaultCdfMaxSamples,
                                       derive_seed(a.seed, i)).value);
    }
    file << '\n';
  }
  out << "wrote predictions for " << feats.size() << " rows to " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------- export

struct ExportArgs {
  std::string model, out_dir;
  std::size_t top = 20;
};

void write_embedding(const fs::path& path, const std::vector<std::string>& names,
                     const Matrix& columns) {
  std::ofstream f = open_out(path);
  for (Index j = 0; j < columns.cols(); ++j) {
    f << names[static_cast<std::size_t>(j)];
    for (Index i = 0; i < columns.rows(); ++i) f << '\t' << num(columns(i, j));
    f << '\n';
  }
}

void write_correlation(const fs::path& path, const std::vector<std::string>& names,
                       const Matrix& sigma, bool full_precision) {
  std::ofstream f = open_out(path);
  for (const auto& s : names) f << ',' << s;
  f << '\n';
  for (Index i = 0; i < sigma.rows(); ++i) {
    f << names[static_cast<std::size_t>(i)];
    for (Index j = 0; j < sigma.cols(); ++j) {
      f << ',' << (full_precision ? num(sigma(i, j)) : fixed3(sigma(i, j)));
    }
    f << '\n';
  }
}

int cmd_export(const ExportArgs& a, std::ostream& out) {
  const ModelParams model = load_model(a.model);
  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  const fs::path dir(a.out_dir);
  const Matrix sigma = sigma_from_lambda(model.lambda_raw);
  write_embedding(dir / "s_embeddings.tsv", model.species_names, model.S);
  write_embedding(dir / "lambda_embeddings.tsv", model.species_names, model.lambda_raw);
  write_correlation(dir / "correlation.csv", model.species_names, sigma, false);
  write_correlation(dir / "correlation_full.csv", model.species_names, sigma, true);

  struct Pair {
    Index i, j;
    double rho;
  };
  std::vector<Pair> pairs;
  for (Index i = 0; i < sigma.rows(); ++i) {
    for (Index j = i + 1; j < sigma.cols(); ++j) pairs.push_back({i, j, sigma(i, j)});
  }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const Pair& x, const Pair& y) { return std::fabs(x.rho) > std::fabs(y.rho); });
  std::ofstream top = open_out(dir / "top_pairs.tsv");
  top << "species_a\tspecies_b\tcorrelation\n";
  for (std::size_t k = 0; k < std::min(a.top, pairs.size()); ++k) {
    top << model.species_names[pairs[k].i] << '\t' << model.species_names[pairs[k].j] << '\t'
        << fixed3(pairs[k].rho) << '\n';
  }
  out << "exported " << model.n_species() << " species to " << a.out_dir << '\n';
  return kOk;
}

// ---------------------------------------------------------------- cv

struct CvArgs {
  std::string data, config, out_dir;
  std::size_t k = 5;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

int cmd_cv(const CvArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig cfg = load_train_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.threads) cfg.threads = *a.threads;
  const Dataset data = load_data(a.data);
  std::vector<Fold> folds;
  try {
    folds = kfold_split(data.size(), a.k, derive_seed(cfg.seed, "folds"));
  } catch (const InvalidArgument& e) {
    fail(kConfigError, e.what());
  }
  if (!a.out_dir.empty()) fs::create_directories(a.out_dir);

  std::vector<std::array<double, 4>> rows;  // mean_auc, joint, independent, gap
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const Dataset tr = data.select(folds[f].train);
    const Dataset va = data.select(folds[f].validation);
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, f);
    try {
      const TrainResult result = run_training(tr, fold_cfg, nullptr, nullptr);
      const EvalReport report = evaluate(result.params, va, cfg.cdf_tol,
                                         derive_seed(fold_cfg.seed, "eval"), cfg.threads);
      out << "fold " << f << ": n_validation=" << va.size()
          << " mean_auc=" << (report.mean_auc ? num(*report.mean_auc) : "NA")
          << " joint_loglik_per_obs=" << num(report.joint_per_obs())
          << " independent_loglik_per_obs=" << num(report.independent_per_obs()) << '\n';
      if (!a.out_dir.empty()) {
        std::ofstream txt = open_out(fs::path(a.out_dir) / ("fold" + std::to_string(f) + ".txt"));
        write_report_text(report, txt);
        std::ofstream csv = open_out(fs::path(a.out_dir) / ("fold" + std::to_string(f) + ".csv"));
        write_report_csv(report, csv);
      }
      rows.push_back({report.mean_auc.value_or(std::nan("")), report.joint_per_obs(),
                      report.independent_per_obs(),
                      report.joint_per_obs() - report.independent_per_obs()});
    } catch (const Failure& e) {
      err << "fold " << f << " failed: " << e.message << '\n';
    }
  }
  if (rows.empty()) fail(kTrainingAborted, "every fold failed");

  static const char* names[] = {"mean_auc", "joint_loglik_per_obs", "independent_loglik_per_obs",
                                "loglik_gap_per_obs"};
  for (std::size_t c = 0; c < 4; ++c) {
    double sum = 0.0;
    std::size_t cnt = 0;
    for (const auto& r : rows) {
      if (std::isfinite(r[c])) {
        sum += r[c];
        ++cnt;
      }
    }
    const double mean = cnt ? sum / static_cast<double>(cnt) : std::nan("");
    double ss = 0.0;
    for (const auto& r : rows) {
      if (std::isfinite(r[c])) ss += (r[c] - mean) * (r[c] - mean);
    }
    const double sd = cnt > 1 ? std::sqrt(ss / static_cast<double>(cnt - 1)) : 0.0;
    out << "aggregate " << names[c] << " = " << num(mean) << " +/- " << num(sd) << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string spec, out, truth;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthSpec spec;
  try {
    spec = synth_spec_from(read_key_values(a.spec));
  } catch (const ConfigError& e) {
    fail(kConfigError, e.what());
  }
  if (a.seed) spec.seed = *a.seed;
  const SynthResult r = synth_generate(spec);
  try {
    save_csv(r.data, a.out);
  } catch (const Error& e) {
    fail(kDataError, e.what());
  }
  const std::string truth_path = a.truth.empty() ? a.out + ".truth.json" : a.truth;
  std::ofstream truth = open_out(truth_path);
  write_ground_truth(r.truth, truth);
  out << "wrote " << r.data.size() << " observations to " << a.out << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint species distribution modeling with multi-species embeddings", "dmse"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Fit a model to a checklist CSV");
  train_cmd->add_option("--data", ta.data, "Training CSV")->required();
  train_cmd->add_option("--config", ta.config, "key = value training config");
  train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
  train_cmd->add_option("--seed", ta.seed, "Overrides the config seed");
  train_cmd->add_option("--threads", ta.threads, "Worker threads (0 = all cores)");
  train_cmd->add_option("--log", ta.log, "Training log path (default <out>.log.jsonl)");
  train_cmd->add_option("--validation", ta.validation, "Validation CSV");
  train_cmd->add_option("--top-species", ta.top_species, "Keep only the most frequent species");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a checklist CSV");
  eval_cmd->add_option("--data", ea.data, "Evaluation CSV")->required();
  eval_cmd->add_option("--model", ea.model, "Checkpoint")->required();
  eval_cmd->add_option("--tol", ea.tol, "Relative CDF tolerance");
  eval_cmd->add_option("--seed", ea.seed, "Integration seed");
  eval_cmd->add_option("--threads", ea.threads, "Worker threads (0 = all cores)");
  eval_cmd->add_option("--out", ea.out, "Report prefix (<out>.txt, <out>.csv)");

  PredictArgs pa;
  auto* predict_cmd = app.add_subcommand("predict", "Per-species and joint probabilities");
  predict_cmd->add_option("--features-csv", pa.features, "CSV with env: columns")->required();
  predict_cmd->add_option("--model", pa.model, "Checkpoint")->required();
  predict_cmd->add_option("--out", pa.out, "Output CSV")->required();
  predict_cmd->add_option("--joint-patterns", pa.patterns,
                          "Presence patterns over all species: 0, 1 or x (marginalized)")
      ->delimiter(',');
  predict_cmd->add_option("--tol", pa.tol, "Relative CDF tolerance");
  predict_cmd->add_option("--seed", pa.seed, "Integration seed");

  ExportArgs xa;
  auto* export_cmd = app.add_subcommand("export", "Write embeddings and correlations");
  export_cmd->add_option("--model", xa.model, "Checkpoint")->required();
  export_cmd->add_option("--out-dir", xa.out_dir, "Output directory")->required();
  export_cmd->add_option("--top", xa.top, "Rows in the top-pairs table");

  CvArgs ca;
  auto* cv_cmd = app.add_subcommand("cv", "k-fold cross-validation");
  cv_cmd->add_option("--data", ca.data, "Checklist CSV")->required();
  cv_cmd->add_option("--config", ca.config, "key = value training config");
  cv_cmd->add_option("--k", ca.k, "Number of folds");
  cv_cmd->add_option("--seed", ca.seed, "Overrides the config seed");
  cv_cmd->add_option("--threads", ca.threads, "Worker threads (0 = all cores)");
  cv_cmd->add_option("--out-dir", ca.out_dir, "Directory for per-fold reports");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic checklist dataset");
  synth_cmd->add_option("--spec-config", sa.spec, "key = value generator config")->required();
  synth_cmd->add_option("--out", sa.out, "Output CSV")->required();
  synth_cmd->add_option("--truth", sa.truth, "Sidecar path (default <out>.truth.json)");
  synth_cmd->add_option("--seed", sa.seed, "Overrides the config seed");

  std::vector<std::string> argv_store{"dmse"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(ta, out);
    if (eval_cmd->parsed()) return cmd_eval(ea, out);
    if (predict_cmd->parsed()) return cmd_predict(pa, out);
    if (export_cmd->parsed()) return cmd_export(xa, out);
    if (cv_cmd->parsed()) return cmd_cv(ca, out, err);
    if (synth_cmd->parsed()) return cmd_synth(sa, out);
  } catch (const Failure& f) {
    err << "error: " << f.message << '\n';
    return f.code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kConfigError;
}

}  // namespace dmse::cli
