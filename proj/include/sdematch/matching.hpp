#pragma once

// Simulation-free variational objective for latent SDEs.
//
//   NELBO = KL(q(z_0|X) || p(z_0))
//         + T * E_{t~U[0,T], eps} [ 1/2 |r(z_t, t)|^2 ]
//         + N * E_{i~U{1..N}, eps} [ -log p(x_i | z_{t_i}) ],
//
// with z_t = mu(X,t) + sigma(X,t) eps and r = (h - f) / g, where f is the drift
// of the posterior SDE whose marginals are q(z_t|X).

#include "sdematch/model.hpp"
#include "sdematch/nn.hpp"

#include <chrono>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace sdematch {

struct LossBreakdown {
  double l_prior = 0.0;
  double l_diff = 0.0;
  double l_rec = 0.0;
  double total = 0.0;
};

// The three terms as tape nodes (scalars).
struct LossTerms {
  Var l_prior;
  Var l_diff;
  Var l_rec;
  Var total;

  LossBreakdown values() const;
};

// Closed-form KL between the diagonal Gaussians q(z_0|X) and p(z_0), summed over D.
Var kl_initial(const PriorProcess& prior, const PosteriorMarginals& q);
Var kl_diag_gaussian(const Var& mu_q, const Var& sigma_q, const Var& mu_p, const Var& sigma_p);

// r = (h - f) / g per row.
Var residual(const PriorProcess& prior, const PosteriorMarginals& q, const Var& t, const Var& eps);
Var residual(const Var& prior_drift, const Var& posterior_drift, const Var& diffusion);

// 1/2 |r|^2 per row (B x 1) at the given (t, eps).
Var diff_integrand(const PriorProcess& prior, const PosteriorMarginals& q, const Var& t,
                   const Var& eps);
// -log p(x_i | z_{t_i}) per row for rows of (observation index, eps).
Var rec_integrand(const PriorProcess& prior, const PosteriorMarginals& q, const TimeSeries& x,
                  std::span<const Index> obs, const Var& eps);

// T * 1/2 |r|^2 at t ~ U[0, T], eps ~ N(0, I); averaged over `samples` draws.
Var diff_loss_sample(const PriorProcess& prior, const PosteriorMarginals& q, Rng& rng,
                     Index samples = 1);
// N * -log p(x_i | z_{t_i}) at i ~ U{1..N}; averaged over `samples` draws.
// Throws std::invalid_argument for an empty series.
Var rec_loss_sample(const PriorProcess& prior, const PosteriorMarginals& q, const TimeSeries& x,
                    Rng& rng, Index samples = 1);

struct MatchingOptions {
  Index diff_samples = 1;
  Index rec_samples = 1;
};

LossTerms matching_loss(const PriorProcess& prior, const PosteriorMarginals& q,
                        const TimeSeries& x, Rng& rng, const MatchingOptions& opt = {});

// ---- training -------------------------------------------------------------

struct StepResult {
  LossBreakdown loss;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  std::size_t tape_nodes = 0;
  bool applied = true;
  std::string failure;  // failing term when !applied
};

struct TrainOptions {
  MatchingOptions loss;
  bool train_prior = true;
};

// Loss and gradients (prior parameters first when trained) without an
// update. grads is empty when the step failed.
struct GradientResult {
  StepResult step;
  std::vector<Matrix> grads;
};
GradientResult matching_gradients(const PriorModel& prior, const PosteriorModel& posterior,
                                  std::span<const TimeSeries> batch, Rng& rng,
                                  const TrainOptions& opt = {});

// One optimizer update on the mean loss over `batch`. The step is skipped
// (parameters untouched) if any loss term or gradient is non-finite.
StepResult training_step(PriorModel& prior, PosteriorModel& posterior,
                         std::span<const TimeSeries> batch, Adam& adam, Rng& rng,
                         const TrainOptions& opt = {});

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Skip-and-recover policy for non-finite steps.
class DivergenceGuard {
 public:
  DivergenceGuard(int halve_after = 5, int give_up_after = 20)
      : halve_after_(halve_after), give_up_after_(give_up_after) {}
  // Updates the failure streak; halves the learning rate every halve_after
  // consecutive failures and throws DivergenceError after give_up_after.
  void record(const StepResult& r, Adam& adam);
  int streak() const { return streak_; }

 private:
  int halve_after_;
  int give_up_after_;
  int streak_ = 0;
};

// CSV: step, l_prior, l_diff, l_rec, total, grad_norm_log10, wall_ms[, extra...].
class MetricsWriter {
 public:
  explicit MetricsWriter(std::ostream& out, std::vector<std::string> extra_columns = {});
  void write(long step, const StepResult& r, const std::vector<double>& extra = {});

 private:
  std::ostream& out_;
  std::size_t extra_;
};

struct TrainConfig {
  long iterations = 5000;
  AdamConfig adam;
  std::uint64_t seed = 0;
  Index batch_size = 0;  // series per step; 0 = all
  TrainOptions step;
  int halve_after = 5;
  int give_up_after = 20;
};

struct TrainSummary {
  long steps = 0;
  long skipped = 0;
  LossBreakdown first;
  LossBreakdown last;
  double final_lr = 0.0;
  double wall_ms = 0.0;
};

// Runs the training loop. Step k draws from stream k of cfg.seed, so the
// whole run is a function of (initial parameters, data, cfg).
TrainSummary train_matching(PriorModel& prior, PosteriorModel& posterior,
                            const std::vector<TimeSeries>& data, const TrainConfig& cfg,
                            MetricsWriter* metrics = nullptr);

// Indices of the series used at step k (all, or a seeded subset).
std::vector<std::size_t> batch_indices(std::size_t n_series, Index batch_size, Rng& rng);

// ---- evaluation -----------------------------------------------------------

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  Index samples = 0;
};

// Monte Carlo NELBO for one series. Each sample uses an independent
// (t, eps) for the diffusion term and an independent eps at every
// observation for the reconstruction term; the reported standard error is
// that of the sample mean.
Estimate estimate_nelbo(const PriorModel& prior, const PosteriorModel& posterior,
                        const TimeSeries& x, Index samples, std::uint64_t seed);

// ---- score-matching correspondence ----------------------------------------

// Noise schedule q(z_t|x) = N(alpha_t x, sigma_t^2 I) in generative time
// (data at t = 1). Both functions map a B x 1 Dual time to B x 1.
struct DiffusionSchedule {
  std::function<Dual(const Dual&)> alpha;
  std::function<Dual(const Dual&)> sigma;
};

using ScoreFn = std::function<Var(const Var& z, const Var& t)>;

struct DsmTerms {
  double lhs = 0.0;  // 1/2 |r|^2 from the latent SDE machinery
  double rhs = 0.0;  // g^2/2 |s - grad log q(z_t|x)|^2
  double g = 0.0;
};

// Posterior mean alpha_t x and scale sigma_t; prior drift f(t) z + g(t)^2 s(z, t)
// with f = alpha'/alpha and g^2 = 2 sigma^2 (alpha'/alpha - sigma'/sigma).
DsmTerms dsm_correspondence_check(const DiffusionSchedule& schedule, const ScoreFn& score,
                                  const Matrix& x, double t, const Matrix& eps);
double dsm_weighted_error(double g, const Matrix& score, const Matrix& true_score);

}  // namespace sdematch
