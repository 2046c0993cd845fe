#include "sdematch/matching.hpp"

#include "sdematch/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace sdematch {

LossBreakdown LossTerms::values() const {
  return {l_prior.item(), l_diff.item(), l_rec.item(), total.item()};
}

Var kl_diag_gaussian(const Var& mu_q, const Var& sigma_q, const Var& mu_p, const Var& sigma_p) {
  const Var ratio = square(div(sigma_q, sigma_p));
  const Var shift = square(div(sub(mu_q, mu_p), sigma_p));
  // 1/2 (ratio + shift - 1 - log ratio)
  const Var per = scale(sub(add_scalar(add(ratio, shift), -1.0), log(ratio)), 0.5);
  return sum(per);
}

Var kl_initial(const PriorProcess& prior, const PosteriorMarginals& q) {
  const Moments m = q.moments(time_column(1, 0.0));
  return kl_diag_gaussian(m.mean.primal, m.scale.primal, prior.initial_mean(),
                          prior.initial_std());
}

Var residual(const Var& prior_drift, const Var& posterior_drift, const Var& diffusion) {
  return div(sub(prior_drift, posterior_drift), diffusion);
}

Var residual(const PriorProcess& prior, const PosteriorMarginals& q, const Var& t, const Var& eps) {
  const PosteriorDrift d = posterior_drift_terms(prior, q, t, eps);
  return residual(prior.drift(d.z, t), d.drift, d.diffusion);
}

Var diff_integrand(const PriorProcess& prior, const PosteriorMarginals& q, const Var& t,
                   const Var& eps) {
  return scale(sum_cols(square(residual(prior, q, t, eps))), 0.5);
}

Var rec_integrand(const PriorProcess& prior, const PosteriorMarginals& q, const TimeSeries& x,
                  std::span<const Index> obs, const Var& eps) {
  const auto rows = static_cast<Index>(obs.size());
  Matrix times(rows, 1);
  Matrix xv(rows, x.dim());
  for (Index r = 0; r < rows; ++r) {
    const Index i = obs[static_cast<std::size_t>(r)];
    if (i < 0 || i >= x.size()) throw std::out_of_range("observation index out of range");
    times(r, 0) = x.times[static_cast<std::size_t>(i)];
    xv.row(r) = x.values.row(i);
  }
  const Var t(std::move(times));
  const Var z = sample_posterior(q, t, eps);
  return neg(obs_loglik(prior, Var(std::move(xv)), z));
}

Var diff_loss_sample(const PriorProcess& prior, const PosteriorMarginals& q, Rng& rng,
                     Index samples) {
  if (samples <= 0) throw std::invalid_argument("diff_loss_sample: samples must be positive");
  const double horizon = q.horizon();
  Matrix times(samples, 1);
  for (Index b = 0; b < samples; ++b) times(b, 0) = horizon * rng.uniform();
  const Var eps(rng.normal_matrix(samples, q.latent_dim()));
  return scale(mean(diff_integrand(prior, q, Var(std::move(times)), eps)), horizon);
}

Var rec_loss_sample(const PriorProcess& prior, const PosteriorMarginals& q, const TimeSeries& x,
                    Rng& rng, Index samples) {
  if (x.size() == 0) throw std::invalid_argument("rec_loss_sample: empty time series");
  if (samples <= 0) throw std::invalid_argument("rec_loss_sample: samples must be positive");
  std::vector<Index> obs(static_cast<std::size_t>(samples));
  for (auto& i : obs) i = rng.index(x.size());
  const Var eps(rng.normal_matrix(samples, q.latent_dim()));
  return scale(mean(rec_integrand(prior, q, x, obs, eps)), static_cast<double>(x.size()));
}

LossTerms matching_loss(const PriorProcess& prior, const PosteriorMarginals& q,
                        const TimeSeries& x, Rng& rng, const MatchingOptions& opt) {
  LossTerms out;
  out.l_prior = kl_initial(prior, q);
  out.l_diff = diff_loss_sample(prior, q, rng, opt.diff_samples);
  out.l_rec = rec_loss_sample(prior, q, x, rng, opt.rec_samples);
  out.total = add(add(out.l_prior, out.l_diff), out.l_rec);
  return out;
}

// ---- training -------------------------------------------------------------

namespace {

std::string first_non_finite(const LossBreakdown& l) {
  if (!std::isfinite(l.l_prior)) return "l_prior";
  if (!std::isfinite(l.l_diff)) return "l_diff";
  if (!std::isfinite(l.l_rec)) return "l_rec";
  if (!std::isfinite(l.total)) return "total";
  return {};
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace

GradientResult matching_gradients(const PriorModel& prior, const PosteriorModel& posterior,
                                  std::span<const TimeSeries> batch, Rng& rng,
                                  const TrainOptions& opt) {
  if (batch.empty()) throw std::invalid_argument("training_step: empty batch");
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
  const Binding qb(posterior.params(), &tape);
  const auto p = prior.bind(pb);
  const double w = 1.0 / static_cast<double>(batch.size());

  Var l_prior, l_diff, l_rec;
  for (const TimeSeries& x : batch) {
    const auto q = posterior.condition(qb, x);
    const Var kl = scale(kl_initial(*p, *q), w);
    l_prior = l_prior.defined() ? add(l_prior, kl) : kl;
    Var diff;
    try {
      diff = scale(diff_loss_sample(*p, *q, rng, opt.loss.diff_samples), w);
    } catch (const NumericalError&) {
      res.loss.l_diff = std::nan("");
      return fail("l_diff");
    }
    l_diff = l_diff.defined() ? add(l_diff, diff) : diff;
    const Var rec = scale(rec_loss_sample(*p, *q, x, rng, opt.loss.rec_samples), w);
    l_rec = l_rec.defined() ? add(l_rec, rec) : rec;
  }
  const Var total = add(add(l_prior, l_diff), l_rec);
  res.loss = {l_prior.item(), l_diff.item(), l_rec.item(), total.item()};
  res.tape_nodes = tape.size();
  if (std::string term = first_non_finite(res.loss); !term.empty()) return fail(std::move(term));
  out.grads = tape.backward(total);
  res.grad_norm = grad_norm(out.grads);
  if (!std::isfinite(res.grad_norm)) {
    out.grads.clear();
    return fail("gradient");
  }
  res.wall_ms = elapsed_ms(start);
  return out;
}

StepResult training_step(PriorModel& prior, PosteriorModel& posterior,
                         std::span<const TimeSeries> batch, Adam& adam, Rng& rng,
                         const TrainOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  GradientResult g = matching_gradients(prior, posterior, batch, rng, opt);
  if (g.step.applied) {
    std::vector<ParameterSet*> sets;
    if (opt.train_prior) sets.push_back(&prior.params());
    sets.push_back(&posterior.params());
    adam.step(sets, g.grads);
  }
  g.step.wall_ms = elapsed_ms(start);
  return g.step;
}

void DivergenceGuard::record(const StepResult& r, Adam& adam) {
  if (r.applied) {
    streak_ = 0;
    return;
  }
  ++streak_;
  if (streak_ >= give_up_after_) {
    throw DivergenceError("training diverged: " + std::to_string(streak_) +
                          " consecutive non-finite steps (last failing term: " + r.failure + ")");
  }
  if (streak_ % halve_after_ == 0) adam.set_lr(0.5 * adam.lr());
}

MetricsWriter::MetricsWriter(std::ostream& out, std::vector<std::string> extra_columns)
    : out_(out), extra_(extra_columns.size()) {
  out_ << "step,l_prior,l_diff,l_rec,total,grad_norm_log10,wall_ms";
  for (const auto& c : extra_columns) out_ << ',' << c;
  out_ << '\n';
}

void MetricsWriter::write(long step, const StepResult& r, const std::vector<double>& extra) {
  if (extra.size() != extra_) throw std::invalid_argument("MetricsWriter: wrong column count");
  const double lg = r.applied ? std::log10(r.grad_norm) : std::nan("");
  out_ << step << ',' << format_double(r.loss.l_prior) << ',' << format_double(r.loss.l_diff)
       << ',' << format_double(r.loss.l_rec) << ',' << format_double(r.loss.total) << ','
       << format_double(lg) << ',' << format_double(r.wall_ms);
  for (double v : extra) out_ << ',' << format_double(v);
  out_ << '\n';
}

std::vector<std::size_t> batch_indices(std::size_t n_series, Index batch_size, Rng& rng) {
  std::vector<std::size_t> idx(n_series);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (batch_size <= 0 || static_cast<std::size_t>(batch_size) >= n_series) return idx;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < static_cast<std::size_t>(batch_size); ++i) {
    const auto j = i + static_cast<std::size_t>(rng.index(static_cast<Index>(n_series - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(batch_size));
  return idx;
}

TrainSummary train_matching(PriorModel& prior, PosteriorModel& posterior,
                            const std::vector<TimeSeries>& data, const TrainConfig& cfg,
                            MetricsWriter* metrics) {
  if (data.empty()) throw std::invalid_argument("train_matching: no data");
  const auto start = std::chrono::steady_clock::now();
  Adam adam(cfg.adam);
  DivergenceGuard guard(cfg.halve_after, cfg.give_up_after);
  TrainSummary summary;
  std::vector<TimeSeries> batch;
  for (long k = 0; k < cfg.iterations; ++k) {
    Rng rng(cfg.seed, static_cast<std::uint64_t>(k));
    batch.clear();
    for (std::size_t i : batch_indices(data.size(), cfg.batch_size, rng)) batch.push_back(data[i]);
    const StepResult r = training_step(prior, posterior, batch, adam, rng, cfg.step);
    if (metrics != nullptr) metrics->write(k, r);
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

// ---- evaluation -----------------------------------------------------------

Estimate estimate_nelbo(const PriorModel& prior, const PosteriorModel& posterior,
                        const TimeSeries& x, Index samples, std::uint64_t seed) {
  if (samples <= 1) throw std::invalid_argument("estimate_nelbo: need at least 2 samples");
  if (x.size() == 0) throw std::invalid_argument("estimate_nelbo: empty time series");
  const Binding pb(prior.params(), nullptr);
  const Binding qb(posterior.params(), nullptr);
  const auto p = prior.bind(pb);
  const auto q = posterior.condition(qb, x);
  const double kl = kl_initial(*p, *q).item();
  const Index n = x.size();
  const Index d = q->latent_dim();
  Matrix obs_times(n, 1);
  for (Index i = 0; i < n; ++i) obs_times(i, 0) = x.times[static_cast<std::size_t>(i)];
  const Moments obs_m = q->moments(Var(obs_times));
  const Matrix& mu = obs_m.mean.primal.value();
  const Matrix& sd = obs_m.scale.primal.value();

  Rng rng(seed);
  std::vector<double> totals;
  totals.reserve(static_cast<std::size_t>(samples));
  constexpr Index kChunk = 256;
  for (Index done = 0; done < samples; done += kChunk) {
    const Index b = std::min(kChunk, samples - done);
    Matrix times(b, 1);
    for (Index k = 0; k < b; ++k) times(k, 0) = x.horizon * rng.uniform();
    const Matrix eps = rng.normal_matrix(b, d);
    const Matrix diff = diff_integrand(*p, *q, Var(std::move(times)), Var(eps)).value();
    Matrix z(b * n, d);
    Matrix xs(b * n, x.dim());
    const Matrix eps_obs = rng.normal_matrix(b * n, d);
    for (Index k = 0; k < b; ++k) {
      z.middleRows(k * n, n) = mu + sd.cwiseProduct(eps_obs.middleRows(k * n, n));
      xs.middleRows(k * n, n) = x.values;
    }
    const Matrix ll = obs_loglik(*p, Var(std::move(xs)), Var(std::move(z))).value();
    for (Index k = 0; k < b; ++k) {
      const double rec = -ll.middleRows(k * n, n).sum();
      totals.push_back(kl + x.horizon * diff(k, 0) + rec);
    }
  }
  Estimate e;
  e.samples = samples;
  const double m = std::accumulate(totals.begin(), totals.end(), 0.0) / static_cast<double>(samples);
  double ss = 0.0;
  for (double v : totals) ss += (v - m) * (v - m);
  e.mean = m;
  e.std_error = std::sqrt(ss / static_cast<double>(samples - 1) / static_cast<double>(samples));
  return e;
}

// ---- score-matching correspondence ----------------------------------------

namespace {

struct ScheduleCoefficients {
  Matrix f;   // B x 1
  Matrix g2;  // B x 1
};

ScheduleCoefficients schedule_coefficients(const DiffusionSchedule& s, const Var& t) {
  const Dual a = time_jvp(s.alpha, t);
  const Dual sg = time_jvp(s.sigma, t);
  const Matrix a_rate = a.tangent_or_zero().value().cwiseQuotient(a.primal.value());
  const Matrix s_rate = sg.tangent_or_zero().value().cwiseQuotient(sg.primal.value());
  ScheduleCoefficients c;
  c.f = a_rate;
  c.g2 = 2.0 * sg.primal.value().cwiseAbs2().cwiseProduct(a_rate - s_rate);
  if (!(c.g2.array() > 0.0).all()) {
    throw std::domain_error("schedule gives non-positive g^2; need alpha'/alpha > sigma'/sigma");
  }
  return c;
}

// Prior dz = [f(t) z + g(t)^2 s(z, t)] dt + g(t) dw.
class SchedulePrior final : public PriorProcess {
 public:
  SchedulePrior(const DiffusionSchedule& s, ScoreFn score, Index dim)
      : s_(s), score_(std::move(score)), dim_(dim) {}

  Index latent_dim() const override { return dim_; }
  Index obs_dim() const override { return dim_; }
  Var drift(const Var& z, const Var& t) const override {
    const ScheduleCoefficients c = schedule_coefficients(s_, t);
    return add(mul(z, Var(c.f)), mul(score_(z, t), Var(c.g2)));
  }
  Dual diffusion(const Dual& z, const Var& t) const override {
    const ScheduleCoefficients c = schedule_coefficients(s_, t);
    Matrix g = c.g2.cwiseSqrt().replicate(1, dim_);
    if (g.rows() != z.rows()) g = g.row(0).replicate(z.rows(), 1);
    return Dual(Var(std::move(g)));
  }
  Var obs_mean(const Var& z) const override { return z; }
  Var obs_std() const override { return Var(Matrix::Ones(1, dim_)); }
  Var initial_mean() const override { return Var(Matrix::Zero(1, dim_)); }
  Var initial_std() const override { return Var(Matrix::Ones(1, dim_)); }

 private:
  const DiffusionSchedule& s_;
  ScoreFn score_;
  Index dim_;
};

}  // namespace

double dsm_weighted_error(double g, const Matrix& score, const Matrix& true_score) {
  return 0.5 * g * g * (score - true_score).squaredNorm();
}

DsmTerms dsm_correspondence_check(const DiffusionSchedule& schedule, const ScoreFn& score,
                                  const Matrix& x, double t, const Matrix& eps) {
  if (x.rows() != 1 || eps.rows() != 1 || x.cols() != eps.cols()) {
    throw ShapeError("dsm_correspondence_check", x, eps);
  }
  const Index d = x.cols();
  const Var xv(x);
  const Var ones(Matrix::Ones(1, d));
  const FunctionalMarginals q(
      d, 1.0, [&](const Dual& tt) { return mul(schedule.alpha(tt), xv); },
      [&](const Dual& tt) { return mul(schedule.sigma(tt), ones); });
  const SchedulePrior prior(schedule, score, d);
  const Var tv = time_column(1, t);
  const Var ev(eps);

  DsmTerms out;
  const Var r = residual(prior, q, tv, ev);
  out.lhs = 0.5 * r.value().squaredNorm();
  const Moments m = q.moments(tv);
  const Matrix z = m.mean.primal.value() + m.scale.primal.value().cwiseProduct(eps);
  const Matrix true_score = -eps.cwiseQuotient(m.scale.primal.value());
  out.g = std::sqrt(schedule_coefficients(schedule, tv).g2(0, 0));
  out.rhs = dsm_weighted_error(out.g, score(Var(z), tv).value(), true_score);
  return out;
}

}  // namespace sdematch
