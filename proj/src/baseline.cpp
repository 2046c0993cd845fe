#include "sdematch/baseline.hpp"

#include "sdematch/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sdematch {

namespace {

std::vector<Index> layer_sizes(Index in, Index hidden, Index depth, Index out) {
  std::vector<Index> sizes{in};
  for (Index i = 0; i < depth; ++i) sizes.push_back(hidden);
  sizes.push_back(out);
  return sizes;
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace

ConventionalPosterior::ConventionalPosterior(const PosteriorConfig& config, std::uint64_t seed)
    : config_(config) {
  if (config.latent_dim <= 0 || config.obs_dim <= 0 || config.context <= 0) {
    throw std::invalid_argument("ConventionalPosterior: dimensions must be positive");
  }
  Rng rng(seed, 0x62617365ULL);
  encoder_ = ContextEncoder(params_, "posterior.encoder", config.obs_dim, config.context,
                            config.mode, rng);
  const Index d = config.latent_dim;
  drift_net_ = Mlp(params_, "posterior.drift",
                   layer_sizes(d + config.context + 1, config.hidden, config.depth, d), rng);
  init_head_ = Mlp(params_, "posterior.init",
                   layer_sizes(config.context, config.hidden, config.depth, 2 * d), rng);
}

class ConventionalPath final : public PathPosterior {
 public:
  ConventionalPath(const ConventionalPosterior& m, Binding b, const TimeSeries& x)
      : m_(m), b_(std::move(b)), ctx_(m_.encoder_.encode(b_, x)) {
    const Var head = m_.init_head_.forward(b_, ctx_.at(time_column(1, 0.0)).primal);
    const Index d = m_.config_.latent_dim;
    mean_ = slice_cols(head, 0, d);
    std_ = add_scalar(softplus(slice_cols(head, d, d)), m_.config_.scale_floor);
  }

  Index latent_dim() const override { return m_.config_.latent_dim; }
  Var initial_mean() const override { return mean_; }
  Var initial_std() const override { return std_; }
  Var drift(const Var& z, const Var& t) const override {
    return m_.drift_net_.forward(b_, concat_cols({z, ctx_.at(t).primal, t}));
  }

 private:
  const ConventionalPosterior& m_;
  Binding b_;
  ContextEncoder::Encoded ctx_;
  Var mean_;
  Var std_;
};

std::unique_ptr<PathPosterior> ConventionalPosterior::condition(const Binding& b,
                                                                const TimeSeries& x) const {
  if (x.dim() != config_.obs_dim) {
    throw ShapeError("posterior expects observations of dimension " +
                     std::to_string(config_.obs_dim) + ", got " + std::to_string(x.dim()));
  }
  return std::make_unique<ConventionalPath>(*this, b, x);
}

std::vector<double> baseline_grid(const TimeSeries& x, Index steps) {
  if (steps <= 0) throw std::invalid_argument("baseline_grid: steps must be positive");
  if (x.size() == 0) throw std::invalid_argument("baseline_grid: empty time series");
  const double t_end = x.times.back();
  std::vector<double> g{0.0};
  if (t_end > 0.0) {
    for (Index n = 1; n <= steps; ++n) {
      g.push_back(t_end * static_cast<double>(n) / static_cast<double>(steps));
    }
    g.back() = t_end;
  }
  g.insert(g.end(), x.times.begin(), x.times.end());
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

LossTerms elbo_path(const PriorProcess& prior, const PathPosterior& post, const TimeSeries& x,
                    Index steps, Rng& rng) {
  x.validate();
  const std::vector<double> grid = baseline_grid(x, steps);
  const Index d = post.latent_dim();
  LossTerms out;
  out.l_prior = kl_diag_gaussian(post.initial_mean(), post.initial_std(), prior.initial_mean(),
                                 prior.initial_std());
  Var z = add(post.initial_mean(), mul(post.initial_std(), Var(rng.normal_matrix(1, d))));
  Var l_diff = Var::scalar(0.0);
  Var l_rec = Var::scalar(0.0);
  std::size_t next_obs = 0;
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const double t = grid[n];
    if (next_obs < x.times.size() && x.times[next_obs] == t) {
      const Var xi(Matrix(x.values.row(static_cast<Index>(next_obs))));
      l_rec = add(l_rec, neg(sum(obs_loglik(prior, xi, z))));
      ++next_obs;
    }
    if (n + 1 == grid.size()) break;
    const double dt = grid[n + 1] - t;
    const Var tv = time_column(1, t);
    const Var h = prior.drift(z, tv);
    const Var g = prior.diffusion(Dual(z), tv).primal;
    const Var f = post.drift(z, tv);
    const Var r = residual(h, f, g);
    l_diff = add(l_diff, scale(sum(square(r)), 0.5 * dt));
    z = add(add(z, scale(f, dt)), mul(g, Var(std::sqrt(dt) * rng.normal_matrix(1, d))));
    if (!all_finite(z.value())) {
      throw NumericalError("elbo_path: non-finite state at step " + std::to_string(n + 1) +
                           " (t=" + std::to_string(grid[n + 1]) + ")");
    }
  }
  out.l_diff = l_diff;
  out.l_rec = l_rec;
  out.total = add(add(out.l_prior, out.l_diff), out.l_rec);
  return out;
}

GradientResult baseline_gradients(const PriorModel& prior, const ConventionalPosterior& post,
                                  std::span<const TimeSeries> batch, Rng& rng,
                                  const BaselineOptions& opt) {
  if (batch.empty()) throw std::invalid_argument("baseline step: empty batch");
  const auto start = std::chrono::steady_clock::now();
  GradientResult out;
  StepResult& res = out.step;
  auto fail = [&](std::string term) {
    res.applied = false;
    res.failure = std::move(term);
    res.wall_ms = elapsed_ms(start);
    return out;
  };
  Tape tape;
  const Binding pb(prior.params(), opt.train_prior ? &tape : nullptr);
  const Binding qb(post.params(), &tape);
  const auto p = prior.bind(pb);
  const double w = 1.0 / static_cast<double>(batch.size());
  Var l_prior = Var::scalar(0.0), l_diff = Var::scalar(0.0), l_rec = Var::scalar(0.0);
  for (const TimeSeries& x : batch) {
    const auto q = post.condition(qb, x);
    LossTerms t;
    try {
      t = elbo_path(*p, *q, x, opt.steps, rng);
    } catch (const NumericalError& e) {
      return fail(e.what());
    }
    l_prior = add(l_prior, scale(t.l_prior, w));
    l_diff = add(l_diff, scale(t.l_diff, w));
    l_rec = add(l_rec, scale(t.l_rec, w));
  }
  const Var total = add(add(l_prior, l_diff), l_rec);
  res.loss = {l_prior.item(), l_diff.item(), l_rec.item(), total.item()};
  res.tape_nodes = tape.size();
  if (!std::isfinite(res.loss.total)) {
    if (!std::isfinite(res.loss.l_prior)) return fail("l_prior");
    if (!std::isfinite(res.loss.l_diff)) return fail("l_diff");
    return fail("l_rec");
  }
  out.grads = tape.backward(total);
  res.grad_norm = grad_norm(out.grads);
  if (!std::isfinite(res.grad_norm)) {
    out.grads.clear();
    return fail("gradient");
  }
  res.wall_ms = elapsed_ms(start);
  return out;
}

StepResult baseline_training_step(PriorModel& prior, ConventionalPosterior& post,
                                  std::span<const TimeSeries> batch, Adam& adam, Rng& rng,
                                  const BaselineOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  GradientResult g = baseline_gradients(prior, post, batch, rng, opt);
  if (g.step.applied) {
    std::vector<ParameterSet*> sets;
    if (opt.train_prior) sets.push_back(&prior.params());
    sets.push_back(&post.params());
    adam.step(sets, g.grads);
  }
  g.step.wall_ms = elapsed_ms(start);
  return g.step;
}

TrainSummary train_baseline(PriorModel& prior, ConventionalPosterior& post,
                            const std::vector<TimeSeries>& data, const BaselineTrainConfig& cfg,
                            MetricsWriter* metrics) {
  if (data.empty()) throw std::invalid_argument("train_baseline: no data");
  const auto start = std::chrono::steady_clock::now();
  Adam adam(cfg.adam);
  DivergenceGuard guard(cfg.halve_after, cfg.give_up_after);
  TrainSummary summary;
  std::vector<TimeSeries> batch;
  for (long k = 0; k < cfg.iterations; ++k) {
    Rng rng(cfg.seed, static_cast<std::uint64_t>(k));
    batch.clear();
    for (std::size_t i : batch_indices(data.size(), cfg.batch_size, rng)) batch.push_back(data[i]);
    const StepResult r = baseline_training_step(prior, post, batch, adam, rng, cfg.step);
    if (metrics != nullptr) {
      metrics->write(k, r, {static_cast<double>(cfg.step.steps), static_cast<double>(r.tape_nodes)});
    }
    if (k == 0) summary.first = r.loss;
    if (r.applied) summary.last = r.loss;
    else ++summary.skipped;
    ++summary.steps;
    guard.record(r, adam);
  }
  summary.final_lr = adam.lr();
  summary.wall_ms = elapsed_ms(start);
  return summary;
}

Estimate estimate_path_nelbo(const PriorModel& prior, const ConventionalPosterior& post,
                             const TimeSeries& x, Index steps, Index samples, std::uint64_t seed) {
  if (samples <= 1) throw std::invalid_argument("estimate_path_nelbo: need at least 2 samples");
  const Binding pb(prior.params(), nullptr);
  const Binding qb(post.params(), nullptr);
  const auto p = prior.bind(pb);
  const auto q = post.condition(qb, x);
  std::vector<double> totals;
  for (Index k = 0; k < samples; ++k) {
    Rng rng(seed, static_cast<std::uint64_t>(k));
    totals.push_back(elbo_path(*p, *q, x, steps, rng).total.item());
  }
  Estimate e;
  e.samples = samples;
  e.mean = std::accumulate(totals.begin(), totals.end(), 0.0) / static_cast<double>(samples);
  double ss = 0.0;
  for (double v : totals) ss += (v - e.mean) * (v - e.mean);
  e.std_error = std::sqrt(ss / static_cast<double>(samples - 1) / static_cast<double>(samples));
  return e;
}

// ---- gradient norm versus horizon -----------------------------------------

std::string method_name(Method m) { return m == Method::kMatching ? "matching" : "baseline"; }

std::vector<HorizonRow> grad_norm_vs_horizon(const LinearSystemSpec& system, Method method,
                                             const HorizonStudy& study) {
  std::vector<HorizonRow> rows;
  for (double horizon : study.horizons) {
    SimulationOptions sim;
    sim.n_obs = study.n_obs;
    sim.horizon = horizon;
    sim.seed = study.data_seed;
    const Dataset data = gen_linear(system, sim);
    const std::vector<TimeSeries> batch{data.series.front()};

    PriorConfig pc;
    pc.latent_dim = system.latent_dim();
    pc.obs_dim = system.obs_dim();
    pc.hidden = study.hidden;
    PosteriorConfig qc;
    qc.latent_dim = pc.latent_dim;
    qc.obs_dim = pc.obs_dim;
    qc.hidden = study.hidden;
    qc.context = study.context;
    NeuralPrior prior(pc, study.model_seed);

    std::vector<double> logs;
    double wall = 0.0;
    double nodes = 0.0;
    for (Index s = 0; s < study.noise_seeds; ++s) {
      Rng rng(study.model_seed + 1, static_cast<std::uint64_t>(s));
      GradientResult g;
      if (method == Method::kMatching) {
        const NeuralPosterior post(qc, study.model_seed);
        g = matching_gradients(prior, post, batch, rng);
      } else {
        const ConventionalPosterior post(qc, study.model_seed);
        BaselineOptions opt;
        opt.steps = std::max<Index>(1, static_cast<Index>(std::llround(study.steps_per_unit_time * horizon)));
        g = baseline_gradients(prior, post, batch, rng, opt);
      }
      logs.push_back(g.step.applied ? std::log10(g.step.grad_norm) : std::nan(""));
      wall += g.step.wall_ms;
      nodes += static_cast<double>(g.step.tape_nodes);
    }
    HorizonRow row{method, horizon};
    const double n = static_cast<double>(logs.size());
    row.mean_log10 = std::accumulate(logs.begin(), logs.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : logs) ss += (v - row.mean_log10) * (v - row.mean_log10);
    row.std_log10 = logs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    row.wall_ms = wall / n;
    row.tape_nodes = nodes / n;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace sdematch
