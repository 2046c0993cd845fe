#include "config.hpp"

#include "sdematch/data.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace sdematch::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long to_long(const std::string& key, const std::string& v) {
  long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw ConfigError("config '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config '" + key + "': expected true or false, got '" + v + "'");
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field field(T RunConfig::*member) {
  Field f;
  if constexpr (std::is_same_v<T, std::string>) {
    f.set = [member](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; };
    f.get = [member](const RunConfig& c) { return c.*member; };
  } else if constexpr (std::is_same_v<T, bool>) {
    f.set = [member](RunConfig& c, const std::string& k, const std::string& v) {
      c.*member = to_bool(k, v);
    };
    f.get = [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); };
  } else if constexpr (std::is_same_v<T, long>) {
    f.set = [member](RunConfig& c, const std::string& k, const std::string& v) {
      c.*member = to_long(k, v);
    };
    f.get = [member](const RunConfig& c) { return std::to_string(c.*member); };
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    f.set = [member](RunConfig& c, const std::string& k, const std::string& v) {
      c.*member = to_u64(k, v);
    };
    f.get = [member](const RunConfig& c) { return std::to_string(c.*member); };
  } else {
    f.set = [member](RunConfig& c, const std::string& k, const std::string& v) {
      c.*member = to_double(k, v);
    };
    f.get = [member](const RunConfig& c) { return format_double(c.*member); };
  }
  return f;
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table{
      {"system", field(&RunConfig::system)},
      {"method", field(&RunConfig::method)},
      {"prior", field(&RunConfig::prior)},
      {"latent_dim", field(&RunConfig::latent_dim)},
      {"hidden", field(&RunConfig::hidden)},
      {"depth", field(&RunConfig::depth)},
      {"context", field(&RunConfig::context)},
      {"context_mode", field(&RunConfig::context_mode)},
      {"state_dependent_diffusion", field(&RunConfig::state_dependent_diffusion)},
      {"g_min", field(&RunConfig::g_min)},
      {"obs_std_init", field(&RunConfig::obs_std_init)},
      {"train_obs_std", field(&RunConfig::train_obs_std)},
      {"train_prior", field(&RunConfig::train_prior)},
      {"iterations", field(&RunConfig::iterations)},
      {"lr", field(&RunConfig::lr)},
      {"seed", field(&RunConfig::seed)},
      {"model_seed", field(&RunConfig::model_seed)},
      {"batch_size", field(&RunConfig::batch_size)},
      {"diff_samples", field(&RunConfig::diff_samples)},
      {"rec_samples", field(&RunConfig::rec_samples)},
      {"steps", field(&RunConfig::steps)},
      {"standardize", field(&RunConfig::standardize)},
      {"n_obs", field(&RunConfig::n_obs)},
      {"n_series", field(&RunConfig::n_series)},
      {"horizon", field(&RunConfig::horizon)},
      {"sim_step", field(&RunConfig::sim_step)},
      {"obs_var", field(&RunConfig::obs_var)},
      {"samples", field(&RunConfig::samples)},
      {"paths", field(&RunConfig::paths)},
      {"forecast_holdout", field(&RunConfig::forecast_holdout)},
      {"forecast_span", field(&RunConfig::forecast_span)},
      {"max_step", field(&RunConfig::max_step)},
      {"sample_steps", field(&RunConfig::sample_steps)},
      {"horizons", field(&RunConfig::horizons)},
      {"noise_seeds", field(&RunConfig::noise_seeds)},
      {"compare_steps", field(&RunConfig::compare_steps)},
      {"timing_reps", field(&RunConfig::timing_reps)},
      {"out_dir", field(&RunConfig::out_dir)},
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

std::map<std::string, std::string> RunConfig::entries() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(*this);
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : fields()) out.push_back(k);
  return out;
}

long RunConfig::resolved_latent_dim() const {
  if (latent_dim > 0) return latent_dim;
  if (system == "lorenz") return 3;
  if (system == "lotka-volterra") return 2;
  return 1;
}

void RunConfig::validate() const {
  auto one_of = [](const std::string& key, const std::string& v, std::vector<std::string> allowed) {
    for (const auto& a : allowed) {
      if (v == a) return;
    }
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    throw ConfigError("config '" + key + "' must be one of " + list + "; got '" + v + "'");
  };
  one_of("system", system, {"linear", "lorenz", "lotka-volterra"});
  one_of("method", method, {"matching", "baseline"});
  one_of("prior", prior, {"neural", "true"});
  one_of("context_mode", context_mode, {"interpolated", "piecewise", "global"});
  if (prior == "true" && system != "linear") {
    throw ConfigError("prior=true is only available for system=linear");
  }
  auto positive = [](const std::string& key, double v) {
    if (!(v > 0.0)) throw ConfigError("config '" + key + "' must be positive");
  };
  positive("hidden", static_cast<double>(hidden));
  positive("depth", static_cast<double>(depth));
  positive("context", static_cast<double>(context));
  positive("g_min", g_min);
  positive("obs_std_init", obs_std_init);
  positive("lr", lr);
  positive("diff_samples", static_cast<double>(diff_samples));
  positive("rec_samples", static_cast<double>(rec_samples));
  positive("steps", static_cast<double>(steps));
  positive("n_obs", static_cast<double>(n_obs));
  positive("n_series", static_cast<double>(n_series));
  positive("horizon", horizon);
  positive("sim_step", sim_step);
  positive("samples", static_cast<double>(samples));
  positive("paths", static_cast<double>(paths));
  positive("forecast_holdout", static_cast<double>(forecast_holdout));
  positive("forecast_span", forecast_span);
  positive("max_step", max_step);
  positive("sample_steps", static_cast<double>(sample_steps));
  positive("noise_seeds", static_cast<double>(noise_seeds));
  positive("timing_reps", static_cast<double>(timing_reps));
  if (iterations < 0) throw ConfigError("config 'iterations' must be non-negative");
  if (latent_dim < 0) throw ConfigError("config 'latent_dim' must be non-negative");
  if (batch_size < 0) throw ConfigError("config 'batch_size' must be non-negative");
  for (double h : parse_list(horizons, "horizons")) positive("horizons", h);
  for (double l : parse_list(compare_steps, "compare_steps")) positive("compare_steps", l);
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string s = trim(line.substr(0, line.find('#')));
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(n) + ": expected key = value");
    }
    cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void write_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& [k, v] : cfg.entries()) out << k << " = " << v << '\n';
  if (!out) throw IoError("error writing " + path);
}

std::vector<double> parse_list(const std::string& s, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
  if (out.empty()) throw ConfigError("config '" + key + "' is empty");
  return out;
}

}  // namespace sdematch::cli
