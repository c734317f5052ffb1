#pragma once

#include "dmse/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dmse {

/// One checklist: presence bits for every species and the site covariates.
struct Observation {
  std::vector<std::uint8_t> presence;
  Vector features;
};

struct Dataset {
  std::vector<Observation> observations;
  std::vector<std::string> species_names;
  std::vector<std::string> feature_names;

  std::size_t size() const { return observations.size(); }
  bool empty() const { return observations.empty(); }
  Index n_species() const { return static_cast<Index>(species_names.size()); }
  Index n_features() const { return static_cast<Index>(feature_names.size()); }

  /// Subset by row index, in the given order.
  Dataset select(const std::vector<std::size_t>& rows) const;
  /// Throws DimMismatch / InvalidArgument on inconsistent rows or names.
  void validate() const;
};

}  // namespace dmse
