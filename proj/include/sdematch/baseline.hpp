#pragma once

// Conventional latent SDE training: simulate the posterior SDE
//
//   dz = f_phi(z, t, X) dt + g_theta(z, t) dw,   z_0 ~ N(mu_phi, sigma_phi^2)
//
// with Euler-Maruyama on one tape, accumulate the path ELBO along the way,
// and backpropagate through the solver. Memory and time are O(L) in the
// number of solver steps.

#include "sdematch/matching.hpp"
#include "sdematch/model.hpp"
#include "sdematch/oracle.hpp"

#include <string>
#include <vector>

namespace sdematch {

// q(z_0|X) and the drift f_phi conditioned on the reverse-time context.
class PathPosterior {
 public:
  virtual ~PathPosterior() = default;
  virtual Index latent_dim() const = 0;
  virtual Var initial_mean() const = 0;  // 1 x D
  virtual Var initial_std() const = 0;   // 1 x D
  virtual Var drift(const Var& z, const Var& t) const = 0;
};

class ConventionalPosterior {
 public:
  ConventionalPosterior(const PosteriorConfig& config, std::uint64_t seed);

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  std::unique_ptr<PathPosterior> condition(const Binding& b, const TimeSeries& x) const;
  const PosteriorConfig& config() const { return config_; }

 private:
  friend class ConventionalPath;
  PosteriorConfig config_;
  ParameterSet params_;
  ContextEncoder encoder_;
  Mlp drift_net_;  // (z, c(t), t) -> D
  Mlp init_head_;  // c(0) -> (mu, log sigma)
};

// Union of L uniform steps over [0, t_N] and the observation times.
std::vector<double> baseline_grid(const TimeSeries& x, Index steps);

// Path ELBO terms for one sampled path: KL at t = 0, sum of 1/2 |r|^2 dt over
// the grid, and -log p(x_i | z_{t_i}) summed over observations. Throws
// NumericalError naming the step when the path becomes non-finite.
LossTerms elbo_path(const PriorProcess& prior, const PathPosterior& post, const TimeSeries& x,
                    Index steps, Rng& rng);

struct BaselineOptions {
  Index steps = 100;
  bool train_prior = true;
};

GradientResult baseline_gradients(const PriorModel& prior, const ConventionalPosterior& post,
                                  std::span<const TimeSeries> batch, Rng& rng,
                                  const BaselineOptions& opt = {});
StepResult baseline_training_step(PriorModel& prior, ConventionalPosterior& post,
                                  std::span<const TimeSeries> batch, Adam& adam, Rng& rng,
                                  const BaselineOptions& opt = {});

struct BaselineTrainConfig {
  long iterations = 5000;
  AdamConfig adam;
  std::uint64_t seed = 0;
  Index batch_size = 0;
  BaselineOptions step;
  int halve_after = 5;
  int give_up_after = 20;
};

// Metrics rows carry the extra columns L and tape_nodes.
TrainSummary train_baseline(PriorModel& prior, ConventionalPosterior& post,
                            const std::vector<TimeSeries>& data, const BaselineTrainConfig& cfg,
                            MetricsWriter* metrics = nullptr);

// Monte Carlo path NELBO with standard error (no gradients).
Estimate estimate_path_nelbo(const PriorModel& prior, const ConventionalPosterior& post,
                             const TimeSeries& x, Index steps, Index samples, std::uint64_t seed);

// ---- gradient norm versus horizon -----------------------------------------

enum class Method { kMatching, kBaseline };
std::string method_name(Method m);

struct HorizonStudy {
  std::vector<double> horizons{1.0, 2.0, 5.0, 10.0};
  Index noise_seeds = 10;
  Index n_obs = 20;
  double steps_per_unit_time = 100.0;  // baseline L = steps_per_unit_time * T
  std::uint64_t model_seed = 0;
  std::uint64_t data_seed = 0;
  Index hidden = 64;
  Index context = 32;
};

struct HorizonRow {
  Method method;
  double horizon;
  double mean_log10 = 0.0;
  double std_log10 = 0.0;
  double wall_ms = 0.0;  // mean per gradient evaluation
  double tape_nodes = 0.0;
};

// For each T: data from the linear system on [0, T], models freshly
// initialized from model_seed, log10 gradient norm of the method's objective
// over noise_seeds draws.
std::vector<HorizonRow> grad_norm_vs_horizon(const LinearSystemSpec& system, Method method,
                                             const HorizonStudy& study);

}  // namespace sdematch
