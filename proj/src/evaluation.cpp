#include "dmse/evaluation.hpp"

#include "dmse/normal.hpp"
#include "dmse/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace dmse {

std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DimMismatch("scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Rank-sum form; tied groups share their average rank.
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]]) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double EvalReport::joint_per_obs() const {
  return n_obs ? joint_loglik / static_cast<double>(n_obs) : 0.0;
}

double EvalReport::independent_per_obs() const {
  return n_obs ? independent_loglik / static_cast<double>(n_obs) : 0.0;
}

EvalReport evaluate(const ModelParams& params, const Dataset& data, double cdf_tol,
                    std::uint64_t seed, unsigned threads) {
  check_compatible(params, data);
  const std::size_t n_obs = data.size();
  const Index n = params.n_species();

  EvalReport r;
  r.species = params.species_names;
  r.n_obs = n_obs;
  r.per_obs_independent.assign(n_obs, 0.0);
  Matrix scores(n, static_cast<Index>(n_obs));
  parallel_for(n_obs, threads, [&](std::size_t i) {
    const Observation& o = data.observations[i];
    const Vector mu = mu_forward(params, standardize_features(params, o.features)).mu;
    double ll = 0.0;
    for (Index j = 0; j < n; ++j) {
      scores(j, static_cast<Index>(i)) = norm_cdf(mu(j));
      ll += log_norm_cdf(o.presence[j] ? mu(j) : -mu(j));
    }
    r.per_obs_independent[i] = ll;
  });

  const DatasetLogLikelihood joint = log_likelihood_dataset(params, data, cdf_tol, seed, threads);
  r.per_obs_joint = joint.per_obs;
  r.joint_loglik = joint.total;
  r.unconverged = joint.unconverged;
  r.independent_loglik = std::accumulate(r.per_obs_independent.begin(),
                                         r.per_obs_independent.end(), 0.0);

  std::vector<double> s(n_obs);
  std::vector<std::uint8_t> labels(n_obs);
  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  for (Index j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n_obs; ++i) {
      s[i] = scores(j, static_cast<Index>(i));
      labels[i] = data.observations[i].presence[j];
    }
    const auto a = auc(s, labels);
    r.per_species_auc.push_back(a);
    if (a) {
      auc_sum += *a;
      ++auc_count;
    }
  }
  if (auc_count) r.mean_auc = auc_sum / static_cast<double>(auc_count);
  return r;
}

PairedGap paired_gap(std::span<const double> joint, std::span<const double> independent) {
  if (joint.size() != independent.size()) throw DimMismatch("paired samples differ in length");
  PairedGap g;
  const std::size_t n = joint.size();
  if (n < 2) return g;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += joint[i] - independent[i];
  g.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = joint[i] - independent[i] - g.mean;
    ss += d * d;
  }
  g.std_error = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  if (g.std_error > 0.0) {
    g.t_stat = g.mean / g.std_error;
    g.p_value = norm_sf(g.t_stat);
  } else {
    g.p_value = g.mean > 0.0 ? 0.0 : 1.0;
  }
  return g;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

}  // namespace

void write_report_text(const EvalReport& r, std::ostream& out) {
  out << "n_obs = " << r.n_obs << '\n'
      << "mean_auc = " << fmt(r.mean_auc) << '\n'
      << "joint_loglik = " << fmt(r.joint_loglik) << '\n'
      << "independent_loglik = " << fmt(r.independent_loglik) << '\n'
      << "joint_loglik_per_obs = " << fmt(r.joint_per_obs()) << '\n'
      << "independent_loglik_per_obs = " << fmt(r.independent_per_obs()) << '\n'
      << "loglik_gap_per_obs = " << fmt(r.joint_per_obs() - r.independent_per_obs()) << '\n'
      << "unconverged_cdf = " << r.unconverged << '\n';
  for (std::size_t j = 0; j < r.species.size(); ++j) {
    out << "auc." << r.species[j] << " = " << fmt(r.per_species_auc[j]) << '\n';
  }
}

void write_report_csv(const EvalReport& r, std::ostream& out) {
  out << "metric,value\n"
      << "n_obs," << r.n_obs << '\n'
      << "mean_auc," << fmt(r.mean_auc) << '\n'
      << "joint_loglik," << fmt(r.joint_loglik) << '\n'
      << "independent_loglik," << fmt(r.independent_loglik) << '\n'
      << "joint_loglik_per_obs," << fmt(r.joint_per_obs()) << '\n'
      << "independent_loglik_per_obs," << fmt(r.independent_per_obs()) << '\n'
      << "loglik_gap_per_obs," << fmt(r.joint_per_obs() - r.independent_per_obs()) << '\n'
      << "unconverged_cdf," << r.unconverged << '\n';
  for (std::size_t j = 0; j < r.species.size(); ++j) {
    out << "auc:" << r.species[j] << ',' << fmt(r.per_species_auc[j]) << '\n';
  }
}

}  // namespace dmse
