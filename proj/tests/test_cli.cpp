#include "dmse/checkpoint.hpp"
#include "dmse/cli.hpp"
#include "dmse/config.hpp"
#include "dmse/dataio.hpp"
#include "dmse/evaluation.hpp"
#include "dmse/normal.hpp"
#include "dmse/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <unistd.h>

using namespace dmse;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string golden(const std::string& name) { return slurp(fs::path(DMSE_GOLDEN_DIR) / (name + ".stderr")); }

// Runs each test case inside a fresh scratch directory.
struct Scratch {
  fs::path previous = fs::current_path();
  fs::path dir;
  Scratch() {
    static int counter = 0;
    dir = fs::temp_directory_path() / ("dmse_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(dir);
    fs::current_path(dir);
    write("good.csv", "sp:robin,sp:jay,env:forest\n1,0,0.5\n0,1,0.2\n1,1,0.9\n0,0,0.1\n");
    write("zero.cfg", "epochs = 0\nd1 = 2\nd2 = 2\nhidden = 3\nminibatch_size = 2\n");
  }
  ~Scratch() {
    fs::current_path(previous);
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

// mu(l) = S^T W l with the identity network and one feature.
ModelParams fixed_model(const Vector& slope, const Matrix& lambda) {
  std::vector<std::string> sp;
  for (Index j = 0; j < slope.size(); ++j) sp.push_back("sp" + std::to_string(j));
  ModelParams p = model_init(sp, {"x"}, ModelShape{1, lambda.rows(), {}}, 1);
  p.W = Matrix::Ones(1, 1);
  p.S = slope.transpose();
  p.lambda_raw = lambda;
  return p;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, line.find('\t') != std::string::npos ? '\t' : ',')) cells.push_back(cell);
    if (!line.empty() && (line.back() == ',' || line.back() == '\t')) cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("diagnostics match golden files") {
  Scratch s;
  write("bad.csv", "sp:robin,env:forest\n1,0.5\n2,0.2\n");
  write("one.csv", "sp:robin,env:forest\n1,0.5\n0,0.2\n");
  write("typo.cfg", "learnin_rate = 0.1\n");
  write("badsynth.cfg", "n_species = 2\nmu_map = cubic\n");
  write("feats.csv", "env:forest\n0.3\n");
  REQUIRE(run({"train", "--data", "good.csv", "--config", "zero.cfg", "--out", "m.bin"}).code == 0);
  write("broken.bin", slurp("m.bin").substr(0, 40));

  struct Case {
    std::string golden;
    int code;
    std::vector<std::string> args;
  };
  const std::vector<Case> cases{
      {"unknown_config_key", 2, {"train", "--data", "good.csv", "--config", "typo.cfg", "--out", "x.bin"}},
      {"non_binary_presence", 3, {"train", "--data", "bad.csv", "--config", "zero.cfg", "--out", "x.bin"}},
      {"missing_species", 3, {"eval", "--data", "one.csv", "--model", "m.bin"}},
      {"corrupt_checkpoint", 3, {"eval", "--data", "good.csv", "--model", "broken.bin"}},
      {"pattern_length", 3,
       {"predict", "--features-csv", "feats.csv", "--model", "m.bin", "--out", "p.csv", "--joint-patterns", "101"}},
      {"missing_required", 2, {"train", "--config", "zero.cfg", "--out", "x.bin"}},
      {"unknown_mu_map", 2, {"synth", "--spec-config", "badsynth.cfg", "--out", "s.csv"}},
      {"missing_file", 3, {"eval", "--data", "missing.csv", "--model", "m.bin"}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.golden);
    const Result r = run(c.args);
    CHECK(r.code == c.code);
    CHECK(r.err == golden(c.golden));
  }
}

TEST_CASE("train: zero epochs writes the seeded initialization") {
  Scratch s;
  const Result r = run({"train", "--data", "good.csv", "--config", "zero.cfg", "--out", "m.bin", "--seed", "7"});
  REQUIRE(r.code == 0);
  std::ifstream cfg_in("zero.cfg");
  TrainConfig cfg = train_config_from(parse_key_values(cfg_in));
  cfg.seed = 7;
  CHECK(slurp("m.bin") == serialize_checkpoint(initial_model(load_csv("good.csv"), cfg)));
  CHECK(fs::exists("m.bin.log.jsonl"));
}

TEST_CASE("train: identical inputs give identical checkpoints") {
  Scratch s;
  SynthSpec spec;
  spec.n_obs = 60;
  spec.seed = 2;
  save_csv(synth_generate(spec).data, "d.csv");
  write("t.cfg", "epochs = 2\nd1 = 3\nd2 = 2\nhidden = 4\nminibatch_size = 10\nn_samples = 32\n"
                 "burn_in_sweeps = 5\nlog_cdf_max_samples = 1536\n");
  REQUIRE(run({"train", "--data", "d.csv", "--config", "t.cfg", "--out", "a.bin", "--threads", "1"}).code == 0);
  REQUIRE(run({"train", "--data", "d.csv", "--config", "t.cfg", "--out", "b.bin", "--threads", "2"}).code == 0);
  CHECK(slurp("a.bin") == slurp("b.bin"));
  std::ifstream log("a.bin.log.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    CHECK(line.front() == '{');
  }
  CHECK(lines == 12);
}

TEST_CASE("eval: report equals the library evaluation") {
  Scratch s;
  SynthSpec spec;
  spec.n_obs = 40;
  spec.seed = 3;
  const SynthResult syn = synth_generate(spec);
  save_csv(syn.data, "d.csv");
  const ModelParams model = model_init(syn.data.species_names, syn.data.feature_names, ModelShape{3, 3, {4}}, 5);
  save_checkpoint(model, "m.bin");
  const Result r = run({"eval", "--data", "d.csv", "--model", "m.bin", "--seed", "9", "--threads", "1", "--out", "rep"});
  REQUIRE(r.code == 0);
  std::ostringstream expected;
  write_report_text(evaluate(model, syn.data, kDefaultCdfTol, 9, 1), expected);
  CHECK(r.out == expected.str());
  CHECK(slurp("rep.txt") == expected.str());
  CHECK(slurp("rep.csv").rfind("metric,value\n", 0) == 0);

  // Sigma = I: joint and independent coincide.
  ModelParams indep = model;
  indep.lambda_raw = Matrix::Identity(3, 2);
  save_checkpoint(indep, "i.bin");
  const Result ri = run({"eval", "--data", "d.csv", "--model", "i.bin"});
  REQUIRE(ri.code == 0);
  std::smatch m;
  REQUIRE(std::regex_search(ri.out, m, std::regex("loglik_gap_per_obs = (\\S+)")));
  CHECK(std::fabs(std::stod(m[1])) < 1e-8);
}

TEST_CASE("predict examples") {
  Scratch s;
  write("f.csv", "env:x,ignored\n0.0,1\n1.5,2\n-0.7,3\n");
  SUBCASE("zero weights give one half") {
    ModelParams p = fixed_model(Vector::Zero(3), Matrix::Identity(3, 3));
    save_checkpoint(p, "m.bin");
    REQUIRE(run({"predict", "--features-csv", "f.csv", "--model", "m.bin", "--out", "p.csv"}).code == 0);
    const auto rows = read_csv("p.csv");
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == std::vector<std::string>{"row", "p:sp0", "p:sp1", "p:sp2"});
    for (std::size_t i = 1; i < 4; ++i)
      for (std::size_t j = 1; j < 4; ++j) CHECK(std::stod(rows[i][j]) == 0.5);
  }
  SUBCASE("independent joint is the product of marginals") {
    ModelParams p = fixed_model(Vector{{0.5, -1.0, 2.0}}, Matrix::Identity(3, 3));
    save_checkpoint(p, "m.bin");
    REQUIRE(run({"predict", "--features-csv", "f.csv", "--model", "m.bin", "--out", "p.csv",
                 "--joint-patterns", "111,1x0"}).code == 0);
    const auto rows = read_csv("p.csv");
    CHECK(rows[0][4] == "joint:111");
    CHECK(rows[0][5] == "joint:1x0");
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double a = std::stod(rows[i][1]), b = std::stod(rows[i][2]), c = std::stod(rows[i][3]);
      CHECK(std::fabs(std::stod(rows[i][4]) - a * b * c) <= 1e-6 * a * b * c);
      CHECK(std::fabs(std::stod(rows[i][5]) - a * (1 - c)) <= 1e-6 * a * (1 - c));
    }
  }
  SUBCASE("correlated orthant and independence from lambda") {
    Matrix lambda(2, 2);
    lambda << 1, 0.5, 0, std::sqrt(0.75);
    ModelParams p = fixed_model(Vector::Zero(2), lambda);
    save_checkpoint(p, "m.bin");
    REQUIRE(run({"predict", "--features-csv", "f.csv", "--model", "m.bin", "--out", "p.csv",
                 "--joint-patterns", "11"}).code == 0);
    CHECK(std::fabs(std::stod(read_csv("p.csv")[1][3]) - 1.0 / 3.0) < 1e-9);

    ModelParams q = fixed_model(Vector{{0.3, -0.2}}, lambda);
    save_checkpoint(q, "q.bin");
    q.lambda_raw = Matrix::Identity(2, 2);
    save_checkpoint(q, "r.bin");
    REQUIRE(run({"predict", "--features-csv", "f.csv", "--model", "q.bin", "--out", "a.csv"}).code == 0);
    REQUIRE(run({"predict", "--features-csv", "f.csv", "--model", "r.bin", "--out", "b.csv"}).code == 0);
    CHECK(slurp("a.csv") == slurp("b.csv"));
  }
  SUBCASE("marginals follow the probit link") {
    ModelParams p = fixed_model(Vector{{1.0}}, Matrix::Identity(1, 1));
    save_checkpoint(p, "m.bin");
    REQUIRE(run({"predict", "--features-csv", "f.csv", "--model", "m.bin", "--out", "p.csv"}).code == 0);
    CHECK(std::stod(read_csv("p.csv")[2][1]) == doctest::Approx(norm_cdf(1.5)).epsilon(1e-15));
  }
  SUBCASE("pattern limits") {
    ModelParams p = fixed_model(Vector::Zero(12), Matrix::Identity(12, 12));
    save_checkpoint(p, "m.bin");
    const Result r = run({"predict", "--features-csv", "f.csv", "--model", "m.bin", "--out", "p.csv",
                          "--joint-patterns", "111111111111"});
    CHECK(r.code == 3);
    CHECK(r.err.find("between 1 and 10") != std::string::npos);
    CHECK(run({"predict", "--features-csv", "f.csv", "--model", "m.bin", "--out", "p.csv",
               "--joint-patterns", "1111111111xx"}).code == 0);
  }
}

TEST_CASE("export examples") {
  Scratch s;
  Matrix same(2, 2);
  same << 1, 3, 2, 6;
  save_checkpoint(fixed_model(Vector::Zero(2), same), "same.bin");
  REQUIRE(run({"export", "--model", "same.bin", "--out-dir", "same"}).code == 0);
  auto top = read_csv("same/top_pairs.tsv");
  CHECK(top[0] == std::vector<std::string>{"species_a", "species_b", "correlation"});
  CHECK(top[1] == std::vector<std::string>{"sp0", "sp1", "1.000"});

  save_checkpoint(fixed_model(Vector::Zero(3), Matrix::Identity(3, 3)), "orth.bin");
  REQUIRE(run({"export", "--model", "orth.bin", "--out-dir", "orth"}).code == 0);
  top = read_csv("orth/top_pairs.tsv");
  REQUIRE(top.size() == 4);
  for (std::size_t i = 1; i < 4; ++i) CHECK(top[i][2] == "0.000");
  const auto corr = read_csv("orth/correlation.csv");
  CHECK(corr[0] == std::vector<std::string>{"", "sp0", "sp1", "sp2"});
  CHECK(corr[1] == std::vector<std::string>{"sp0", "1.000", "0.000", "0.000"});

  Rng rng(4);
  const Matrix lambda = Matrix::NullaryExpr(3, 5, [&] { return rng.normal(); });
  const ModelParams p = fixed_model(Vector::Zero(5), lambda);
  save_checkpoint(p, "r.bin");
  REQUIRE(run({"export", "--model", "r.bin", "--out-dir", "r", "--top", "3"}).code == 0);
  const Matrix sigma = sigma_from_lambda(lambda);
  const auto full = read_csv("r/correlation_full.csv");
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) CHECK(std::fabs(std::stod(full[i + 1][j + 1]) - sigma(i, j)) <= 1e-6);
  top = read_csv("r/top_pairs.tsv");
  REQUIRE(top.size() == 4);
  CHECK(std::fabs(std::stod(top[1][2])) >= std::fabs(std::stod(top[2][2])));
  CHECK(std::fabs(std::stod(top[2][2])) >= std::fabs(std::stod(top[3][2])));
  const auto emb = read_csv("r/lambda_embeddings.tsv");
  REQUIRE(emb.size() == 5);
  CHECK(emb[2][0] == "sp2");
  CHECK(std::stod(emb[2][3]) == lambda(2, 2));

  const Result bad = run({"export", "--model", "missing.bin", "--out-dir", "z"});
  CHECK(bad.code == 3);
}

TEST_CASE("cv partitions and aggregates") {
  Scratch s;
  SynthSpec spec;
  spec.n_obs = 100;
  spec.seed = 8;
  save_csv(synth_generate(spec).data, "d.csv");
  write("c.cfg", "epochs = 1\nd1 = 2\nd2 = 2\nhidden = 3\nminibatch_size = 20\nn_samples = 16\n"
                 "burn_in_sweeps = 2\nlog_cdf_max_samples = 768\ncdf_tol = 1e-3\n");
  const Result a = run({"cv", "--data", "d.csv", "--config", "c.cfg", "--k", "5", "--seed", "3", "--out-dir", "folds"});
  REQUIRE(a.code == 0);
  const Result b = run({"cv", "--data", "d.csv", "--config", "c.cfg", "--k", "5", "--seed", "3"});
  CHECK(a.out == b.out);

  std::regex fold_re("fold (\\d+): n_validation=(\\d+) mean_auc=(\\S+) joint_loglik_per_obs=(\\S+)");
  std::vector<double> joint;
  for (auto it = std::sregex_iterator(a.out.begin(), a.out.end(), fold_re); it != std::sregex_iterator(); ++it) {
    CHECK((*it)[2] == "20");
    joint.push_back(std::stod((*it)[4]));
  }
  REQUIRE(joint.size() == 5);
  double mean = 0.0;
  for (double v : joint) mean += v / 5.0;
  std::smatch m;
  REQUIRE(std::regex_search(a.out, m, std::regex("aggregate joint_loglik_per_obs = (\\S+) \\+/- (\\S+)")));
  CHECK(std::stod(m[1]) == doctest::Approx(mean).epsilon(1e-12));
  for (int f = 0; f < 5; ++f) CHECK(fs::exists("folds/fold" + std::to_string(f) + ".csv"));

  // The validation blocks are the library's seeded folds.
  const auto folds = kfold_split(100, 5, derive_seed(3, "folds"));
  std::set<std::size_t> all;
  for (const auto& f : folds) all.insert(f.validation.begin(), f.validation.end());
  CHECK(all.size() == 100);

  CHECK(run({"cv", "--data", "d.csv", "--config", "c.cfg", "--k", "1"}).code == 2);
}

TEST_CASE("synth writes data and ground truth") {
  Scratch s;
  write("s.cfg", "n_species = 2\nm_features = 3\nn_obs = 30\nmu_map = xor-radial\nrho = 0.6\nseed = 4\n");
  REQUIRE(run({"synth", "--spec-config", "s.cfg", "--out", "a.csv"}).code == 0);
  REQUIRE(run({"synth", "--spec-config", "s.cfg", "--out", "b.csv", "--truth", "b.json"}).code == 0);
  CHECK(slurp("a.csv") == slurp("b.csv"));
  CHECK(slurp("a.csv.truth.json") == slurp("b.json"));
  const Dataset d = load_csv("a.csv");
  CHECK(d.size() == 30);
  CHECK(d.n_features() == 3);
  std::ifstream in("b.json");
  const GroundTruth t = read_ground_truth(in);
  CHECK(t.sigma(0, 1) == 0.6);
  CHECK(t.mu_map == MuMap::kXorRadial);
  REQUIRE(run({"synth", "--spec-config", "s.cfg", "--out", "c.csv", "--seed", "5"}).code == 0);
  CHECK(slurp("c.csv") != slurp("a.csv"));
}
