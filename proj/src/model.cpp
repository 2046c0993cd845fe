#include "sdematch/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace sdematch {

void TimeSeries::validate() const {
  if (static_cast<Index>(times.size()) != values.rows()) {
    throw std::invalid_argument("time series has " + std::to_string(times.size()) +
                                " times but " + std::to_string(values.rows()) + " value rows");
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < 0.0 || times[i] > horizon) {
      throw std::invalid_argument("observation time " + std::to_string(times[i]) +
                                  " outside [0, " + std::to_string(horizon) + "]");
    }
    if (i > 0 && !(times[i] > times[i - 1])) {
      throw std::invalid_argument("observation times must be strictly increasing");
    }
  }
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

Var time_column(Index rows, double t) { return Var(Matrix::Constant(rows, 1, t)); }

namespace {

std::vector<Index> layer_sizes(Index in, Index hidden, Index depth, Index out) {
  std::vector<Index> sizes{in};
  for (Index i = 0; i < depth; ++i) sizes.push_back(hidden);
  sizes.push_back(out);
  return sizes;
}

}  // namespace

// ---- neural prior ---------------------------------------------------------

NeuralPrior::NeuralPrior(const PriorConfig& config, std::uint64_t seed) : config_(config) {
  if (config.latent_dim <= 0 || config.obs_dim <= 0 || config.hidden <= 0 || config.depth < 0) {
    throw std::invalid_argument("NeuralPrior: dimensions must be positive");
  }
  if (!(config.g_min > 0.0)) throw std::invalid_argument("NeuralPrior: g_min must be positive");
  Rng rng(seed, 0x7072696f72ULL);
  const Index d = config.latent_dim;
  drift_net_ = Mlp(params_, "prior.drift", layer_sizes(d + 1, config.hidden, config.depth, d), rng);
  const Index g_in = config.state_dependent_diffusion ? 2 : 1;
  for (Index k = 0; k < d; ++k) {
    diffusion_nets_.emplace_back(params_, "prior.diffusion" + std::to_string(k),
                                 layer_sizes(g_in, config.hidden, config.depth, 1), rng,
                                 /*zero_last=*/true);
  }
  decoder_ = Mlp(params_, "prior.decoder",
                 layer_sizes(d, config.hidden, config.depth, config.obs_dim), rng);
  mu0_ = params_.add("prior.mu0", Matrix::Zero(1, d));
  log_sigma0_ = params_.add("prior.log_sigma0", Matrix::Zero(1, d));
  if (!(config.obs_std_init > 0.0)) throw std::invalid_argument("NeuralPrior: obs_std_init must be positive");
  log_obs_std_ = params_.add("prior.log_obs_std",
                             Matrix::Constant(1, config.obs_dim, std::log(config.obs_std_init)));
}

class NeuralPriorProcess final : public PriorProcess {
 public:
  NeuralPriorProcess(const NeuralPrior& model, Binding b) : m_(model), b_(std::move(b)) {}

  Index latent_dim() const override { return m_.config_.latent_dim; }
  Index obs_dim() const override { return m_.config_.obs_dim; }

  Var drift(const Var& z, const Var& t) const override {
    return m_.drift_net_.forward(b_, concat_cols({z, t}));
  }

  Dual diffusion(const Dual& z, const Var& t) const override {
    std::vector<Dual> cols;
    cols.reserve(m_.diffusion_nets_.size());
    const Dual td(t);
    for (std::size_t k = 0; k < m_.diffusion_nets_.size(); ++k) {
      Dual in = td;
      if (m_.config_.state_dependent_diffusion) {
        const Dual parts[] = {slice_cols(z, static_cast<Index>(k), 1), td};
        in = concat_cols(parts);
      } else if (z.rows() != t.rows()) {
        in = repeat_rows(td, z.rows());
      }
      cols.push_back(add_scalar(softplus(m_.diffusion_nets_[k].forward(b_, in)), m_.config_.g_min));
    }
    return concat_cols(cols);
  }

  Var obs_mean(const Var& z) const override { return m_.decoder_.forward(b_, z); }
  Var obs_std() const override {
    if (!m_.config_.train_obs_std) return Var(Matrix(b_[m_.log_obs_std_].value().array().exp()));
    return exp(b_[m_.log_obs_std_]);
  }
  Var initial_mean() const override { return b_[m_.mu0_]; }
  Var initial_std() const override { return exp(b_[m_.log_sigma0_]); }

 private:
  const NeuralPrior& m_;
  Binding b_;
};

std::unique_ptr<PriorProcess> NeuralPrior::bind(const Binding& b) const {
  return std::make_unique<NeuralPriorProcess>(*this, b);
}

// ---- context encoder ------------------------------------------------------

ContextEncoder::ContextEncoder(ParameterSet& params, const std::string& prefix, Index obs_dim,
                               Index context, ContextMode mode, Rng& rng)
    : cell_(params, prefix, obs_dim + 1, context, rng), mode_(mode) {}

ContextEncoder::Encoded ContextEncoder::encode(const Binding& b, const TimeSeries& x) const {
  if (x.size() == 0) throw std::invalid_argument("cannot encode an empty time series");
  Encoded out;
  out.times = x.times;
  out.mode = mode_;
  Var h = Var::zeros(1, cell_.hidden());
  std::vector<Var> states(static_cast<std::size_t>(x.size()));
  for (Index i = x.size() - 1; i >= 0; --i) {
    Matrix in(1, x.dim() + 1);
    in.leftCols(x.dim()) = x.values.row(i);
    in(0, x.dim()) = x.times[static_cast<std::size_t>(i)];
    h = cell_.step(b, Var(std::move(in)), h);
    states[static_cast<std::size_t>(i)] = h;
  }
  out.states = mode_ == ContextMode::kGlobal ? states.front() : concat_rows(states);
  return out;
}

Dual ContextEncoder::Encoded::at(const Var& query) const {
  const Index n = query.rows();
  if (mode == ContextMode::kGlobal) return Dual(repeat_rows(states, n));
  const auto last = static_cast<Index>(times.size()) - 1;
  std::vector<Index> hi(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) {
    const double t = query.value()(r, 0);
    auto it = std::lower_bound(times.begin(), times.end(), t);
    hi[static_cast<std::size_t>(r)] = it == times.end() ? last : static_cast<Index>(it - times.begin());
  }
  if (mode == ContextMode::kPiecewise) return Dual(gather_rows(states, hi));

  std::vector<Index> lo(hi.size());
  Matrix w(n, 1);
  Matrix rate(n, 1);
  for (Index r = 0; r < n; ++r) {
    const auto k = static_cast<std::size_t>(r);
    const double t = query.value()(r, 0);
    if (hi[k] == 0 || t > times.back()) {
      lo[k] = hi[k];
      w(r, 0) = 1.0;
      rate(r, 0) = 0.0;
    } else {
      lo[k] = hi[k] - 1;
      const double t0 = times[static_cast<std::size_t>(lo[k])];
      const double span = times[static_cast<std::size_t>(hi[k])] - t0;
      w(r, 0) = (t - t0) / span;
      rate(r, 0) = 1.0 / span;
    }
  }
  const Var c_lo = gather_rows(states, lo);
  const Var c_hi = gather_rows(states, hi);
  const Var delta = sub(c_hi, c_lo);
  return Dual(add(c_lo, mul(delta, Var(std::move(w)))), mul(delta, Var(std::move(rate))));
}

// ---- neural posterior -----------------------------------------------------

NeuralPosterior::NeuralPosterior(const PosteriorConfig& config, std::uint64_t seed)
    : config_(config) {
  if (config.latent_dim <= 0 || config.obs_dim <= 0 || config.context <= 0) {
    throw std::invalid_argument("NeuralPosterior: dimensions must be positive");
  }
  Rng rng(seed, 0x706f7374ULL);
  encoder_ = ContextEncoder(params_, "posterior.encoder", config.obs_dim, config.context,
                            config.mode, rng);
  const auto sizes =
      layer_sizes(config.context + 1, config.hidden, config.depth, config.latent_dim);
  mean_head_ = Mlp(params_, "posterior.mean", sizes, rng);
  scale_head_ = Mlp(params_, "posterior.scale", sizes, rng);
}

class NeuralMarginals final : public PosteriorMarginals {
 public:
  NeuralMarginals(const NeuralPosterior& model, Binding b, const TimeSeries& x)
      : m_(model), b_(std::move(b)), ctx_(m_.encoder_.encode(b_, x)), horizon_(x.horizon) {}

  Index latent_dim() const override { return m_.config_.latent_dim; }
  double horizon() const override { return horizon_; }

  Moments moments(const Var& times) const override {
    const Dual t(times, Var(Matrix::Ones(times.rows(), 1)));
    const Dual parts[] = {ctx_.at(times), t};
    const Dual in = concat_cols(parts);
    Dual mean = m_.mean_head_.forward(b_, in);
    Dual scale = add_scalar(softplus(m_.scale_head_.forward(b_, in)), m_.config_.scale_floor);
    return {std::move(mean), std::move(scale)};
  }

 private:
  const NeuralPosterior& m_;
  Binding b_;
  ContextEncoder::Encoded ctx_;
  double horizon_;
};

std::unique_ptr<PosteriorMarginals> NeuralPosterior::condition(const Binding& b,
                                                               const TimeSeries& x) const {
  if (x.dim() != config_.obs_dim) {
    throw ShapeError("posterior expects observations of dimension " +
                     std::to_string(config_.obs_dim) + ", got " + std::to_string(x.dim()));
  }
  return std::make_unique<NeuralMarginals>(*this, b, x);
}

FunctionalMarginals::FunctionalMarginals(Index latent_dim, double horizon, Fn mean, Fn scale)
    : dim_(latent_dim), horizon_(horizon), mean_(std::move(mean)), scale_(std::move(scale)) {}

Moments FunctionalMarginals::moments(const Var& times) const {
  const Dual t(times, Var(Matrix::Ones(times.rows(), 1)));
  Dual mean = mean_(t);
  Dual scale = scale_(t);
  if (mean.cols() != dim_ || scale.cols() != dim_) {
    throw ShapeError("FunctionalMarginals", mean.primal.value(), scale.primal.value());
  }
  return {std::move(mean), std::move(scale)};
}

// ---- operations -----------------------------------------------------------

namespace {

void check_times(const PosteriorMarginals& q, const Var& t) {
  if (t.cols() != 1) throw ShapeError("times must be a column, got " + std::to_string(t.cols()) + " columns");
  const Matrix& v = t.value();
  if ((v.array() < 0.0).any() || (v.array() > q.horizon()).any()) {
    throw std::domain_error("query time outside [0, " + std::to_string(q.horizon()) + "]");
  }
}

void check_latent(const PosteriorMarginals& q, const Var& t, const Var& m, const char* what) {
  if (m.cols() != q.latent_dim() || m.rows() != t.rows()) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(t.rows()) + "x" +
                     std::to_string(q.latent_dim()) + ", got " + std::to_string(m.rows()) +
                     "x" + std::to_string(m.cols()));
  }
}

}  // namespace

Var sample_posterior(const PosteriorMarginals& q, const Var& t, const Var& eps) {
  check_times(q, t);
  check_latent(q, t, eps, "sample_posterior eps");
  const Moments m = q.moments(t);
  return add(m.mean.primal, mul(m.scale.primal, eps));
}

Var invert_posterior(const PosteriorMarginals& q, const Var& t, const Var& z) {
  check_times(q, t);
  check_latent(q, t, z, "invert_posterior z");
  const Moments m = q.moments(t);
  return div(sub(z, m.mean.primal), m.scale.primal);
}

Var posterior_score(const PosteriorMarginals& q, const Var& t, const Var& eps) {
  check_times(q, t);
  check_latent(q, t, eps, "posterior_score eps");
  const Moments m = q.moments(t);
  return neg(div(eps, m.scale.primal));
}

Var conditional_ode_drift(const PosteriorMarginals& q, const Var& t, const Var& z) {
  check_times(q, t);
  check_latent(q, t, z, "conditional_ode_drift z");
  const Moments m = q.moments(t);
  const Var eps = div(sub(z, m.mean.primal), m.scale.primal);
  const Var drift = add(m.mean.tangent_or_zero(), mul(m.scale.tangent_or_zero(), eps));
  if (!all_finite(drift.value())) throw NumericalError("conditional_ode_drift: non-finite tangent");
  return drift;
}

PosteriorDrift posterior_drift_terms(const PriorProcess& prior, const PosteriorMarginals& q,
                                     const Var& t, const Var& eps) {
  check_times(q, t);
  check_latent(q, t, eps, "posterior drift eps");
  return posterior_drift_terms(prior, q.moments(t), t, eps);
}

PosteriorDrift posterior_drift_terms(const PriorProcess& prior, const Moments& m, const Var& t,
                                     const Var& eps) {
  PosteriorDrift out;
  out.z = add(m.mean.primal, mul(m.scale.primal, eps));
  out.ode_drift = add(m.mean.tangent_or_zero(), mul(m.scale.tangent_or_zero(), eps));
  out.score = neg(div(eps, m.scale.primal));
  const Dual g = prior.diffusion(Dual(out.z, Var(Matrix::Ones(out.z.rows(), out.z.cols()))), t);
  out.diffusion = g.primal;
  out.divergence = g.has_tangent() ? mul(g.primal, *g.tangent)
                                   : Var::zeros(out.z.rows(), out.z.cols());
  out.drift = add(add(out.ode_drift, scale(mul(square(g.primal), out.score), 0.5)),
                  out.divergence);
  return out;
}

Var posterior_sde_drift(const PriorProcess& prior, const PosteriorMarginals& q, const Var& t,
                        const Var& eps) {
  return posterior_drift_terms(prior, q, t, eps).drift;
}

Var prior_drift(const PriorProcess& prior, const Var& z, const Var& t) {
  return prior.drift(z, t);
}

Var prior_diffusion(const PriorProcess& prior, const Var& z, const Var& t) {
  return prior.diffusion(Dual(z), t).primal;
}

Var obs_loglik(const PriorProcess& prior, const Var& x, const Var& z) {
  if (x.cols() != prior.obs_dim() || x.rows() != z.rows()) {
    throw ShapeError("obs_loglik", x.value(), z.value());
  }
  const Var std = prior.obs_std();
  const Var resid = div(sub(x, prior.obs_mean(z)), std);
  const double c = 0.5 * static_cast<double>(prior.obs_dim()) * std::log(2.0 * std::numbers::pi);
  return add_scalar(sub(scale(sum_cols(square(resid)), -0.5), sum(log(std))), -c);
}

Matrix initial_prior_sample(const PriorProcess& prior, Rng& rng, Index paths) {
  const Matrix& mu = prior.initial_mean().value();
  const Matrix& sd = prior.initial_std().value();
  Matrix out = rng.normal_matrix(paths, mu.cols());
  for (Index p = 0; p < paths; ++p) {
    out.row(p) = mu.row(0).array() + sd.row(0).array() * out.row(p).array();
  }
  return out;
}

}  // namespace sdematch
