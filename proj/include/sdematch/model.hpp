#pragma once

// Latent SDE generative model and the simulation-free posterior.
//
// Prior:      dz = h(z,t) dt + g(z,t) dw,  z_0 ~ N(mu0, diag sigma0^2),
//             x_t | z_t ~ N(decoder(z_t), diag r^2)
// Posterior:  z_t = F(eps, t, X) = mu(X,t) + sigma(X,t) * eps,  eps ~ N(0, I)
//
// g is diagonal and g_kk depends on (z_k, t) only, so the divergence of g g^T
// reduces to d(g_kk^2)/dz_k, obtained with one forward-mode pass in z.
//
// All functions are row-batched: z and eps are B x D, times are B x 1.

#include "sdematch/dual.hpp"
#include "sdematch/nn.hpp"
#include "sdematch/timeseries.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace sdematch {

// Posterior marginal parameters at a batch of times; tangents are d/dt.
struct Moments {
  Dual mean;   // B x D
  Dual scale;  // B x D, strictly positive
};

// q(z_t | X) for one fixed series X.
class PosteriorMarginals {
 public:
  virtual ~PosteriorMarginals() = default;
  virtual Index latent_dim() const = 0;
  virtual double horizon() const = 0;
  virtual Moments moments(const Var& times) const = 0;
};

// A prior process with its parameters bound (to a tape or as constants).
class PriorProcess {
 public:
  virtual ~PriorProcess() = default;
  virtual Index latent_dim() const = 0;
  virtual Index obs_dim() const = 0;
  virtual Var drift(const Var& z, const Var& t) const = 0;
  // Diagonal of g, B x D. A tangent on z is propagated coordinatewise, so a
  // unit tangent yields dg_kk/dz_k.
  virtual Dual diffusion(const Dual& z, const Var& t) const = 0;
  virtual Var obs_mean(const Var& z) const = 0;
  virtual Var obs_std() const = 0;  // 1 x d_x
  virtual Var initial_mean() const = 0;  // 1 x D
  virtual Var initial_std() const = 0;   // 1 x D
};

// Owners of trainable parameters.
class PriorModel {
 public:
  virtual ~PriorModel() = default;
  virtual ParameterSet& params() = 0;
  virtual const ParameterSet& params() const = 0;
  virtual std::unique_ptr<PriorProcess> bind(const Binding& b) const = 0;
};

class PosteriorModel {
 public:
  virtual ~PosteriorModel() = default;
  virtual ParameterSet& params() = 0;
  virtual const ParameterSet& params() const = 0;
  virtual std::unique_ptr<PosteriorMarginals> condition(const Binding& b,
                                                        const TimeSeries& x) const = 0;
};

// ---- neural prior ---------------------------------------------------------

struct PriorConfig {
  Index latent_dim = 1;
  Index obs_dim = 1;
  Index hidden = 64;
  Index depth = 2;
  bool state_dependent_diffusion = true;
  double g_min = 1e-4;
  double obs_std_init = 1.0;
  bool train_obs_std = true;
};

class NeuralPrior final : public PriorModel {
 public:
  NeuralPrior(const PriorConfig& config, std::uint64_t seed);

  ParameterSet& params() override { return params_; }
  const ParameterSet& params() const override { return params_; }
  std::unique_ptr<PriorProcess> bind(const Binding& b) const override;
  const PriorConfig& config() const { return config_; }

 private:
  friend class NeuralPriorProcess;
  PriorConfig config_;
  ParameterSet params_;
  Mlp drift_net_;
  std::vector<Mlp> diffusion_nets_;  // one per latent coordinate
  Mlp decoder_;
  std::size_t mu0_ = 0, log_sigma0_ = 0, log_obs_std_ = 0;
};

// ---- neural posterior -----------------------------------------------------

enum class ContextMode {
  // Final state of the reverse-time recurrence (has seen every observation);
  // constant in t.
  kGlobal,
  // Recurrent state at the smallest t_i >= t; piecewise constant in t.
  kPiecewise,
  // Linear interpolation between the states at neighbouring observation
  // times; continuous in t, with d/dt carried as a tangent.
  kInterpolated,
};

struct PosteriorConfig {
  Index latent_dim = 1;
  Index obs_dim = 1;
  Index hidden = 64;
  Index depth = 2;
  Index context = 32;
  ContextMode mode = ContextMode::kInterpolated;
  double scale_floor = 1e-4;
};

// Reverse-time GRU summary of a series.
class ContextEncoder {
 public:
  ContextEncoder() = default;
  ContextEncoder(ParameterSet& params, const std::string& prefix, Index obs_dim, Index context,
                 ContextMode mode, Rng& rng);

  struct Encoded {
    Var states;  // N x C; row i summarizes observations i..N-1
    std::vector<double> times;
    ContextMode mode = ContextMode::kInterpolated;
    // Context rows for a column of query times (B x C); the tangent is dc/dt
    // (absent unless interpolated).
    Dual at(const Var& query) const;
  };

  Encoded encode(const Binding& b, const TimeSeries& x) const;
  Index size() const { return cell_.hidden(); }

 private:
  GruCell cell_;
  ContextMode mode_ = ContextMode::kGlobal;
};

class NeuralPosterior final : public PosteriorModel {
 public:
  NeuralPosterior(const PosteriorConfig& config, std::uint64_t seed);

  ParameterSet& params() override { return params_; }
  const ParameterSet& params() const override { return params_; }
  std::unique_ptr<PosteriorMarginals> condition(const Binding& b,
                                                const TimeSeries& x) const override;
  const PosteriorConfig& config() const { return config_; }

 private:
  friend class NeuralMarginals;
  PosteriorConfig config_;
  ParameterSet params_;
  ContextEncoder encoder_;
  Mlp mean_head_;
  Mlp scale_head_;
};

// Marginals given directly as differentiable functions of t (B x 1 -> B x D).
class FunctionalMarginals final : public PosteriorMarginals {
 public:
  using Fn = std::function<Dual(const Dual& t)>;
  FunctionalMarginals(Index latent_dim, double horizon, Fn mean, Fn scale);

  Index latent_dim() const override { return dim_; }
  double horizon() const override { return horizon_; }
  Moments moments(const Var& times) const override;

 private:
  Index dim_;
  double horizon_;
  Fn mean_;
  Fn scale_;
};

// ---- operations -----------------------------------------------------------

// z_t = mu + sigma * eps. Throws std::domain_error for t outside [0, horizon].
Var sample_posterior(const PosteriorMarginals& q, const Var& t, const Var& eps);
// F^{-1}(z_t) = (z_t - mu) / sigma.
Var invert_posterior(const PosteriorMarginals& q, const Var& t, const Var& z);
// grad_z log q(z_t|X) = -eps / sigma.
Var posterior_score(const PosteriorMarginals& q, const Var& t, const Var& eps);
// dF/dt at eps = F^{-1}(z); throws NumericalError on a non-finite tangent.
Var conditional_ode_drift(const PosteriorMarginals& q, const Var& t, const Var& z);

struct PosteriorDrift {
  Var z;           // F(eps, t)
  Var ode_drift;   // dF/dt
  Var score;       // -eps / sigma
  Var diffusion;   // diag g(z, t)
  Var divergence;  // 1/2 d(g_kk^2)/dz_k
  Var drift;       // ode_drift + 1/2 g^2 score + divergence
};

PosteriorDrift posterior_drift_terms(const PriorProcess& prior, const PosteriorMarginals& q,
                                     const Var& t, const Var& eps);
// Same, from precomputed moments; a single moments row is broadcast over eps.
PosteriorDrift posterior_drift_terms(const PriorProcess& prior, const Moments& m, const Var& t,
                                     const Var& eps);
// Drift of the posterior SDE whose marginals are q(z_t|X) for every t.
Var posterior_sde_drift(const PriorProcess& prior, const PosteriorMarginals& q, const Var& t,
                        const Var& eps);

Var prior_drift(const PriorProcess& prior, const Var& z, const Var& t);
Var prior_diffusion(const PriorProcess& prior, const Var& z, const Var& t);
// log N(x; decoder(z), diag r^2) per row (B x 1).
Var obs_loglik(const PriorProcess& prior, const Var& x, const Var& z);
// P draws from p(z_0).
Matrix initial_prior_sample(const PriorProcess& prior, Rng& rng, Index paths);

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

bool all_finite(const Matrix& m);
Var time_column(Index rows, double t);

}  // namespace sdematch
