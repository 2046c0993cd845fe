#pragma once

// Flat key=value run configuration. Values resolve in the order
// defaults < config file < command-line overrides.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdematch::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string system = "linear";  // linear | lorenz | lotka-volterra
  std::string method = "matching";  // matching | baseline
  std::string prior = "neural";  // neural | true (linear system only)
  long latent_dim = 0;  // 0: the system's own dimension
  long hidden = 64;
  long depth = 2;
  long context = 32;
  std::string context_mode = "interpolated";  // interpolated | piecewise | global
  bool state_dependent_diffusion = true;
  double g_min = 1e-4;
  double obs_std_init = 1.0;
  bool train_obs_std = true;
  bool train_prior = true;

  long iterations = 5000;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  std::uint64_t model_seed = 0;
  long batch_size = 0;  // 0: all series
  long diff_samples = 1;
  long rec_samples = 1;
  long steps = 100;  // baseline L
  bool standardize = false;

  long n_obs = 20;
  long n_series = 1;
  double horizon = 1.0;
  double sim_step = 1e-4;
  double obs_var = -1.0;  // < 0: the system's default

  long samples = 1000;
  long paths = 100;
  long forecast_holdout = 3;
  double forecast_span = 0.1;
  double max_step = 1e-3;
  long sample_steps = 1000;

  std::string horizons = "1,2,5,10";
  long noise_seeds = 10;
  std::string compare_steps = "10,50,100,200";
  long timing_reps = 50;

  std::string out_dir = ".";

  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> entries() const;
  static std::vector<std::string> keys();

  // Throws ConfigError on values outside their domain.
  void validate() const;
  long resolved_latent_dim() const;
};

void load_config_file(RunConfig& cfg, const std::string& path);
// "key=value".
void apply_override(RunConfig& cfg, const std::string& assignment);
void write_config(const RunConfig& cfg, const std::string& path);

std::vector<double> parse_list(const std::string& s, const std::string& key);

}  // namespace sdematch::cli
