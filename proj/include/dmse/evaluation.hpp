#pragma once

#include "dmse/core.hpp"
#include "dmse/dataset.hpp"
#include "dmse/model.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace dmse {

/// Mann-Whitney AUC with half credit for ties. Empty when the labels are
/// all one class.
std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct EvalReport {
  std::vector<std::string> species;
  std::vector<std::optional<double>> per_species_auc;
  std::optional<double> mean_auc;  // over species with a defined AUC
  double joint_loglik = 0.0;
  double independent_loglik = 0.0;  // same mu, Sigma = I
  std::size_t n_obs = 0;
  std::size_t unconverged = 0;
  std::vector<double> per_obs_joint;
  std::vector<double> per_obs_independent;

  double joint_per_obs() const;
  double independent_per_obs() const;
};

EvalReport evaluate(const ModelParams& params, const Dataset& data, double cdf_tol,
                    std::uint64_t seed, unsigned threads = 0);

/// Paired comparison of per-observation joint vs independent log-likelihood.
struct PairedGap {
  double mean = 0.0;
  double std_error = 0.0;
  double t_stat = 0.0;
  double p_value = 1.0;  // one-sided, H1: mean > 0 (normal approximation)
};

PairedGap paired_gap(std::span<const double> joint, std::span<const double> independent);

/// Flat "key = value" report.
void write_report_text(const EvalReport& report, std::ostream& out);
/// Two-column "metric,value" CSV.
void write_report_csv(const EvalReport& report, std::ostream& out);

}  // namespace dmse
