#include "dmse/dataio.hpp"

#include "dmse/mvn.hpp"
#include "dmse/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace dmse {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

bool parse_double(std::string_view text, double& out) {
  if (text.empty()) return false;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (*begin == '+') ++begin;
  const auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void check_unique(const std::vector<std::string>& names, const char* what) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw MalformedHeader(std::string("empty ") + what + " name in header");
    if (!seen.insert(n).second) {
      throw MalformedHeader(std::string("duplicate ") + what + " column '" + n + "'");
    }
  }
}

}  // namespace

NonBinaryPresence::NonBinaryPresence(std::size_t r, std::string col, std::string value)
    : DataError("row " + std::to_string(r) + ", column '" + col +
                "': presence must be 0 or 1, got '" + value + "'"),
      row(r),
      column(std::move(col)) {}

NonFiniteFeature::NonFiniteFeature(std::size_t r, std::string col, std::string value)
    : DataError("row " + std::to_string(r) + ", column '" + col +
                "': feature must be a finite number, got '" + value + "'"),
      row(r),
      column(std::move(col)) {}

Dataset Dataset::select(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.species_names = species_names;
  out.feature_names = feature_names;
  out.observations.reserve(rows.size());
  for (std::size_t r : rows) out.observations.push_back(observations.at(r));
  return out;
}

void Dataset::validate() const {
  check_unique(species_names, "species");
  check_unique(feature_names, "feature");
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto& o = observations[i];
    if (static_cast<Index>(o.presence.size()) != n_species() ||
        o.features.size() != n_features()) {
      throw DimMismatch("observation " + std::to_string(i) + " has inconsistent dimensions");
    }
    for (auto b : o.presence) {
      if (b > 1) throw InvalidArgument("presence bits must be 0 or 1");
    }
  }
}

Dataset parse_csv(std::istream& in, std::string_view species_prefix,
                  std::string_view feature_prefix, bool require_species) {
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw MalformedHeader("missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  enum class Kind { kSpecies, kFeature, kOther };
  std::vector<Kind> kinds;
  std::vector<std::string> headers;
  Dataset data;
  for (std::string_view h : split(line)) {
    headers.emplace_back(h);
    if (h.starts_with(species_prefix)) {
      kinds.push_back(Kind::kSpecies);
      data.species_names.emplace_back(h.substr(species_prefix.size()));
    } else if (h.starts_with(feature_prefix)) {
      kinds.push_back(Kind::kFeature);
      data.feature_names.emplace_back(h.substr(feature_prefix.size()));
    } else {
      kinds.push_back(Kind::kOther);
    }
  }
  if (require_species && data.species_names.empty()) {
    throw MalformedHeader("header has no '" + std::string(species_prefix) + "' columns");
  }
  if (data.feature_names.empty()) {
    throw MalformedHeader("header has no '" + std::string(feature_prefix) + "' columns");
  }
  check_unique(data.species_names, "species");
  check_unique(data.feature_names, "feature");

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    if (fields.size() != kinds.size()) {
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(kinds.size()));
    }
    Observation obs;
    obs.presence.reserve(data.species_names.size());
    obs.features.resize(data.n_features());
    Index f = 0;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (kinds[c] == Kind::kSpecies) {
        if (fields[c] == "0") {
          obs.presence.push_back(0);
        } else if (fields[c] == "1") {
          obs.presence.push_back(1);
        } else {
          throw NonBinaryPresence(row, headers[c], std::string(fields[c]));
        }
      } else if (kinds[c] == Kind::kFeature) {
        double v;
        if (!parse_double(fields[c], v) || !std::isfinite(v)) {
          throw NonFiniteFeature(row, headers[c], std::string(fields[c]));
        }
        obs.features(f++) = v;
      }
    }
    data.observations.push_back(std::move(obs));
  }
  return data;
}

Dataset load_csv(const std::filesystem::path& path, std::string_view species_prefix,
                 std::string_view feature_prefix) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return parse_csv(in, species_prefix, feature_prefix);
}

void write_csv(const Dataset& data, std::ostream& out) {
  bool first = true;
  auto sep = [&] {
    if (!first) out << ',';
    first = false;
  };
  for (const auto& s : data.species_names) {
    sep();
    out << kSpeciesPrefix << s;
  }
  for (const auto& f : data.feature_names) {
    sep();
    out << kFeaturePrefix << f;
  }
  out << '\n';
  for (const auto& o : data.observations) {
    first = true;
    for (auto b : o.presence) {
      sep();
      out << (b ? '1' : '0');
    }
    for (Index k = 0; k < o.features.size(); ++k) {
      sep();
      out << format_double(o.features(k));
    }
    out << '\n';
  }
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  write_csv(data, out);
}

FeatureStats feature_stats(const Dataset& data) {
  const Index m = data.n_features();
  FeatureStats s{Vector::Zero(m), Vector::Ones(m), std::vector<bool>(m, false)};
  if (data.empty()) return s;
  const double n = static_cast<double>(data.size());
  for (const auto& o : data.observations) s.mean += o.features;
  s.mean /= n;
  Vector var = Vector::Zero(m);
  for (const auto& o : data.observations) var += (o.features - s.mean).cwiseAbs2();
  var /= n;
  for (Index k = 0; k < m; ++k) {
    const double sd = std::sqrt(var(k));
    if (sd < 1e-12) {
      s.constant[k] = true;
    } else {
      s.scale(k) = sd;
    }
  }
  return s;
}

Standardized standardize(const Dataset& data) {
  if (data.size() < 2) throw InvalidArgument("standardization needs at least two observations");
  Standardized out{data, feature_stats(data)};
  for (auto& o : out.data.observations) {
    o.features = (o.features - out.stats.mean).cwiseQuotient(out.stats.scale);
  }
  return out;
}

FilteredSpecies filter_top_species(const Dataset& data, std::size_t top_k) {
  const std::size_t n = data.species_names.size();
  if (top_k > n) throw InvalidArgument("top_k exceeds the number of species");
  std::vector<std::size_t> counts(n, 0);
  for (const auto& o : data.observations) {
    for (std::size_t j = 0; j < n; ++j) counts[j] += o.presence[j];
  }
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return data.species_names[a] < data.species_names[b];
  });
  std::vector<std::size_t> keep(rank.begin(), rank.begin() + static_cast<long>(top_k));
  std::sort(keep.begin(), keep.end());

  FilteredSpecies out;
  out.data.feature_names = data.feature_names;
  for (std::size_t j : keep) out.data.species_names.push_back(data.species_names[j]);
  std::size_t total = 0;
  std::size_t kept = 0;
  for (std::size_t j = 0; j < n; ++j) total += counts[j];
  for (std::size_t j : keep) kept += counts[j];
  out.coverage = total == 0 ? 1.0 : static_cast<double>(kept) / static_cast<double>(total);
  out.data.observations.reserve(data.size());
  for (const auto& o : data.observations) {
    Observation r{{}, o.features};
    for (std::size_t j : keep) r.presence.push_back(o.presence[j]);
    out.data.observations.push_back(std::move(r));
  }
  return out;
}

std::string_view to_string(MuMap map) {
  switch (map) {
    case MuMap::kLinear: return "linear";
    case MuMap::kMlpRandom: return "mlp-random";
    case MuMap::kXorRadial: return "xor-radial";
  }
  return "linear";
}

std::optional<MuMap> parse_mu_map(std::string_view text) {
  if (text == "linear") return MuMap::kLinear;
  if (text == "mlp-random" || text == "mlp") return MuMap::kMlpRandom;
  if (text == "xor-radial") return MuMap::kXorRadial;
  return std::nullopt;
}

void SynthSpec::validate() const {
  if (n_species < 1 || m_features < 1) throw InvalidArgument("need at least one species and feature");
  if (mu_map == MuMap::kXorRadial && m_features < 2) {
    throw InvalidArgument("xor-radial mean map needs at least two features");
  }
  if (true_sigma.size() == 0) return;
  if (true_sigma.rows() != n_species || true_sigma.cols() != n_species) {
    throw DimMismatch("true_sigma must be n_species x n_species");
  }
  if ((true_sigma.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12) {
    throw InvalidArgument("true_sigma must have a unit diagonal");
  }
  if ((true_sigma - true_sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw InvalidArgument("true_sigma must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(true_sigma, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10) {
    throw InvalidArgument("true_sigma is not positive semidefinite");
  }
}

Vector GroundTruth::mu(const Vector& l) const {
  switch (mu_map) {
    case MuMap::kLinear:
      return mu_scale * (coef * l + intercept);
    case MuMap::kMlpRandom:
      return mu_scale * mlp_forward(mlp, l).output;
    case MuMap::kXorRadial: {
      const double product = 4.0 * l(0) * l(1);
      const double radial = 3.0 * (l(0) * l(0) + l(1) * l(1) - 2.0 / 3.0);
      return mu_scale * (mix.col(0) * product + mix.col(1) * radial);
    }
  }
  return {};
}

SynthResult synth_generate(const SynthSpec& spec) {
  spec.validate();
  const Index n = spec.n_species;
  const Index m = spec.m_features;
  Rng model_rng(derive_seed(spec.seed, "synth-model"));
  Rng data_rng(derive_seed(spec.seed, "synth-data"));

  GroundTruth t;
  t.mu_map = spec.mu_map;
  t.mu_scale = spec.mu_scale;
  t.sigma = spec.true_sigma.size() ? spec.true_sigma : Matrix::Identity(n, n);
  switch (spec.mu_map) {
    case MuMap::kLinear:
      t.coef.resize(n, m);
      t.intercept.resize(n);
      for (Index j = 0; j < n; ++j) {
        for (Index k = 0; k < m; ++k) t.coef(j, k) = model_rng.uniform(-1.0, 1.0);
        t.intercept(j) = model_rng.uniform(-0.5, 0.5);
      }
      break;
    case MuMap::kMlpRandom:
      t.mlp = mlp_init({m, 16, n}, derive_seed(spec.seed, "synth-mlp"));
      break;
    case MuMap::kXorRadial:
      t.mix.resize(n, 2);
      for (Index j = 0; j < n; ++j) {
        const double angle = model_rng.uniform(0.0, 2.0 * std::numbers::pi);
        t.mix(j, 0) = std::cos(angle);
        t.mix(j, 1) = std::sin(angle);
      }
      break;
  }

  const Matrix chol = cholesky(t.sigma).lower;

  SynthResult out;
  for (Index j = 0; j < n; ++j) out.data.species_names.push_back("species" + std::to_string(j + 1));
  for (Index k = 0; k < m; ++k) out.data.feature_names.push_back("f" + std::to_string(k + 1));
  out.data.observations.reserve(spec.n_obs);
  Vector z(n);
  for (std::size_t i = 0; i < spec.n_obs; ++i) {
    Observation o;
    o.features.resize(m);
    for (Index k = 0; k < m; ++k) o.features(k) = data_rng.uniform(-1.0, 1.0);
    for (Index j = 0; j < n; ++j) z(j) = data_rng.normal();
    const Vector r = t.mu(o.features) + chol * z;
    o.presence.resize(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) o.presence[j] = r(j) > 0.0 ? 1 : 0;
    out.data.observations.push_back(std::move(o));
  }
  out.truth = std::move(t);
  return out;
}

namespace {

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix json_matrix(const nlohmann::json& j) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows ? static_cast<Index>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (static_cast<Index>(j[r].size()) != cols) throw DataError("ragged matrix in sidecar");
    for (Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace

void write_ground_truth(const GroundTruth& t, std::ostream& out) {
  nlohmann::json j;
  j["mu_map"] = std::string(to_string(t.mu_map));
  j["mu_scale"] = t.mu_scale;
  j["sigma"] = matrix_json(t.sigma);
  switch (t.mu_map) {
    case MuMap::kLinear:
      j["coef"] = matrix_json(t.coef);
      j["intercept"] = matrix_json(t.intercept);
      break;
    case MuMap::kMlpRandom: {
      j["layer_dims"] = t.mlp.layer_dims;
      nlohmann::json layers = nlohmann::json::array();
      for (std::size_t k = 0; k < t.mlp.num_layers(); ++k) {
        layers.push_back({{"weight", matrix_json(t.mlp.weights[k])},
                          {"bias", matrix_json(t.mlp.biases[k])}});
      }
      j["layers"] = std::move(layers);
      break;
    }
    case MuMap::kXorRadial:
      j["mix"] = matrix_json(t.mix);
      break;
  }
  out << j.dump(2) << '\n';
}

GroundTruth read_ground_truth(std::istream& in) {
  GroundTruth t;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    const auto map = parse_mu_map(j.at("mu_map").get<std::string>());
    if (!map) throw DataError("unknown mu_map in sidecar");
    t.mu_map = *map;
    t.mu_scale = j.at("mu_scale").get<double>();
    t.sigma = json_matrix(j.at("sigma"));
    switch (t.mu_map) {
      case MuMap::kLinear:
        t.coef = json_matrix(j.at("coef"));
        t.intercept = json_matrix(j.at("intercept")).col(0);
        break;
      case MuMap::kMlpRandom:
        t.mlp = MlpParams::zeros(j.at("layer_dims").get<std::vector<Index>>());
        for (std::size_t k = 0; k < t.mlp.num_layers(); ++k) {
          t.mlp.weights[k] = json_matrix(j.at("layers").at(k).at("weight"));
          t.mlp.biases[k] = json_matrix(j.at("layers").at(k).at("bias")).col(0);
        }
        break;
      case MuMap::kXorRadial:
        t.mix = json_matrix(j.at("mix"));
        break;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed ground-truth sidecar: ") + e.what());
  }
  return t;
}

}  // namespace dmse
