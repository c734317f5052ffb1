#include "dmse/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace dmse {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_real(const std::string& key, const std::string& v) {
  double out;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_count(const std::string& key, const std::string& v) {
  std::uint64_t out;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_key_values(in);
}

TrainConfig train_config_from(const KeyValues& kv, TrainConfig c) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"learning_rate", [&](auto& k, auto& v) { c.learning_rate = to_real(k, v); }},
      {"adagrad_epsilon", [&](auto& k, auto& v) { c.adagrad_epsilon = to_real(k, v); }},
      {"minibatch_size", [&](auto& k, auto& v) { c.minibatch_size = to_count(k, v); }},
      {"epochs", [&](auto& k, auto& v) { c.epochs = to_count(k, v); }},
      {"cdf_tol", [&](auto& k, auto& v) { c.cdf_tol = to_real(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.seed = to_count(k, v); }},
      {"eval_every", [&](auto& k, auto& v) { c.eval_every = to_count(k, v); }},
      {"patience", [&](auto& k, auto& v) { c.patience = to_count(k, v); }},
      {"threads", [&](auto& k, auto& v) { c.threads = static_cast<unsigned>(to_count(k, v)); }},
      {"log_cdf_max_samples",
       [&](auto& k, auto& v) { c.log_cdf_max_samples = static_cast<std::int64_t>(to_count(k, v)); }},
      {"d1", [&](auto& k, auto& v) { c.shape.d1 = static_cast<Index>(to_count(k, v)); }},
      {"d2", [&](auto& k, auto& v) { c.shape.d2 = static_cast<Index>(to_count(k, v)); }},
      {"hidden",
       [&](auto& k, auto& v) {
         c.shape.hidden.clear();
         if (v == "none" || v.empty()) return;
         for (const auto& item : split_list(v)) {
           c.shape.hidden.push_back(static_cast<Index>(to_count(k, item)));
         }
       }},
      {"n_samples",
       [&](auto& k, auto& v) { c.sampler.n_samples = static_cast<Index>(to_count(k, v)); }},
      {"burn_in_sweeps",
       [&](auto& k, auto& v) { c.sampler.burn_in_sweeps = static_cast<Index>(to_count(k, v)); }},
      {"thinning",
       [&](auto& k, auto& v) { c.sampler.thinning = static_cast<Index>(to_count(k, v)); }},
      {"cutoff_k", [&](auto& k, auto& v) { c.sampler.cutoff_k = to_real(k, v); }},
      {"sampler_seed", [&](auto& k, auto& v) { c.sampler.rng_seed = to_count(k, v); }},
  };
  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(key, value);
  }
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

SynthSpec synth_spec_from(const KeyValues& kv) {
  SynthSpec s;
  std::string rho;
  std::string sigma;
  for (const auto& [key, value] : kv) {
    if (key == "n_species") {
      s.n_species = static_cast<Index>(to_count(key, value));
    } else if (key == "m_features") {
      s.m_features = static_cast<Index>(to_count(key, value));
    } else if (key == "n_obs") {
      s.n_obs = to_count(key, value);
    } else if (key == "mu_map") {
      const auto m = parse_mu_map(value);
      if (!m) throw ConfigError("config key 'mu_map': unknown map '" + value + "'");
      s.mu_map = *m;
    } else if (key == "mu_scale") {
      s.mu_scale = to_real(key, value);
    } else if (key == "seed") {
      s.seed = to_count(key, value);
    } else if (key == "rho") {
      rho = value;
    } else if (key == "sigma") {
      sigma = value;
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  if (!rho.empty() && !sigma.empty()) throw ConfigError("set either 'rho' or 'sigma', not both");
  const Index n = s.n_species;
  if (!rho.empty()) {
    s.true_sigma = Matrix::Constant(n, n, to_real("rho", rho));
    s.true_sigma.diagonal().setOnes();
  } else if (!sigma.empty()) {
    const auto items = split_list(sigma);
    if (static_cast<Index>(items.size()) != n * n) {
      throw ConfigError("config key 'sigma': expected " + std::to_string(n * n) + " entries");
    }
    s.true_sigma.resize(n, n);
    for (Index i = 0; i < n * n; ++i) s.true_sigma(i / n, i % n) = to_real("sigma", items[i]);
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid synth config: ") + e.what());
  }
  return s;
}

}  // namespace dmse
