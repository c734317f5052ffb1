#pragma once

// Checklist CSV ingestion, feature standardization, species filtering and
// the synthetic data generator.
//
// CSV contract: UTF-8, comma separated, one header row. Presence columns are
// named "sp:<name>" with values 0/1, covariate columns "env:<name>" with
// finite reals. Other columns are ignored.

#include "dmse/core.hpp"
#include "dmse/dataset.hpp"
#include "dmse/mlp.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace dmse {

struct DataError : Error {
  using Error::Error;
};

struct MalformedHeader : DataError {
  using DataError::DataError;
};

/// row is the 1-based line number in the file (the header is line 1).
struct NonBinaryPresence : DataError {
  NonBinaryPresence(std::size_t row, std::string column, std::string value);
  std::size_t row;
  std::string column;
};

struct NonFiniteFeature : DataError {
  NonFiniteFeature(std::size_t row, std::string column, std::string value);
  std::size_t row;
  std::string column;
};

inline constexpr std::string_view kSpeciesPrefix = "sp:";
inline constexpr std::string_view kFeaturePrefix = "env:";

Dataset load_csv(const std::filesystem::path& path,
                 std::string_view species_prefix = kSpeciesPrefix,
                 std::string_view feature_prefix = kFeaturePrefix);

/// Parse from a stream. With require_species false, files without presence
/// columns are accepted (prediction inputs).
Dataset parse_csv(std::istream& in, std::string_view species_prefix = kSpeciesPrefix,
                  std::string_view feature_prefix = kFeaturePrefix,
                  bool require_species = true);

/// Writes species columns first, then features, at round-trip precision.
void save_csv(const Dataset& data, const std::filesystem::path& path);
void write_csv(const Dataset& data, std::ostream& out);

/// Population mean and std per feature; constant features (std < 1e-12)
/// get scale 1 and are flagged.
struct FeatureStats {
  Vector mean;
  Vector scale;
  std::vector<bool> constant;
};

FeatureStats feature_stats(const Dataset& data);

struct Standardized {
  Dataset data;
  FeatureStats stats;
};

/// z-score every feature. Needs at least two observations.
Standardized standardize(const Dataset& data);

struct FilteredSpecies {
  Dataset data;
  /// Retained presence records over all presence records.
  double coverage = 1.0;
};

/// Keep the top_k species by presence count; ties go to the lexicographically
/// smaller name. Column order of the kept species is preserved.
FilteredSpecies filter_top_species(const Dataset& data, std::size_t top_k);

enum class MuMap { kLinear, kMlpRandom, kXorRadial };

std::string_view to_string(MuMap map);
std::optional<MuMap> parse_mu_map(std::string_view text);

struct SynthSpec {
  Index n_species = 2;
  Index m_features = 2;
  std::size_t n_obs = 1000;
  MuMap mu_map = MuMap::kLinear;
  /// Multiplies the linear coefficients / network output / radial terms.
  double mu_scale = 1.0;
  Matrix true_sigma;  // empty means identity
  std::uint64_t seed = 0;

  void validate() const;
};

/// Everything needed to evaluate the generating mean map again.
struct GroundTruth {
  MuMap mu_map = MuMap::kLinear;
  double mu_scale = 1.0;
  Matrix coef;       // linear: n x m
  Vector intercept;  // linear: n
  MlpParams mlp;     // mlp-random: m -> n network
  Matrix mix;        // xor-radial: n x 2 weights on (product, radius) terms
  Matrix sigma;

  Vector mu(const Vector& features) const;
};

struct SynthResult {
  Dataset data;
  GroundTruth truth;
};

/// Forward sampling of the probit model: l ~ U[-1, 1]^m, r ~ N(mu(l), Sigma),
/// b_j = [r_j > 0].
SynthResult synth_generate(const SynthSpec& spec);

/// JSON sidecar describing the generating model.
void write_ground_truth(const GroundTruth& truth, std::ostream& out);
GroundTruth read_ground_truth(std::istream& in);

}  // namespace dmse
