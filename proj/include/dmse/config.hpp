#pragma once

// Flat "key = value" configuration files; '#' starts a comment.

#include "dmse/core.hpp"
#include "dmse/dataio.hpp"
#include "dmse/trainer.hpp"

#include <istream>
#include <map>
#include <string>

namespace dmse {

struct ConfigError : Error {
  using Error::Error;
};

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::string& path);

/// Every TrainConfig and SamplerConfig field, by name. Unknown keys throw.
///   learning_rate adagrad_epsilon minibatch_size epochs cdf_tol seed
///   eval_every patience threads log_cdf_max_samples d1 d2 hidden
///   n_samples burn_in_sweeps thinning cutoff_k sampler_seed
/// `hidden` is a comma-separated width list, or "none" for the identity.
TrainConfig train_config_from(const KeyValues& kv, TrainConfig base = {});

/// n_species m_features n_obs mu_map mu_scale seed, plus either `rho`
/// (every off-diagonal) or `sigma` (row-major comma list).
SynthSpec synth_spec_from(const KeyValues& kv);

}  // namespace dmse
