#include "sdematch/data.hpp"
#include "sdematch/model.hpp"
#include "sdematch/oracle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace sdematch {
namespace {

using testing::max_rel_err;
using testing::random_matrix;

// Prior assembled from plain functions; g_fn maps (z, t) to the diagonal.
class FnPrior final : public PriorProcess {
 public:
  using DualFn = std::function<Dual(const Dual&, const Var&)>;
  FnPrior(Index d, DualFn g) : d_(d), g_(std::move(g)) {}

  Index latent_dim() const override { return d_; }
  Index obs_dim() const override { return d_; }
  Var drift(const Var& z, const Var&) const override { return scale(z, -1.0); }
  Dual diffusion(const Dual& z, const Var& t) const override { return g_(z, t); }
  Var obs_mean(const Var& z) const override { return z; }
  Var obs_std() const override { return Var(Matrix::Ones(1, d_)); }
  Var initial_mean() const override { return Var(Matrix::Zero(1, d_)); }
  Var initial_std() const override { return Var(Matrix::Ones(1, d_)); }

 private:
  Index d_;
  DualFn g_;
};

TimeSeries small_series(Index d = 2, Index n = 6, std::uint64_t seed = 4) {
  TimeSeries x;
  x.times = uniform_times(n, 1.0);
  x.values = random_matrix(n, d, seed);
  return x;
}

PosteriorConfig posterior_config(Index d, ContextMode mode = ContextMode::kInterpolated) {
  PosteriorConfig c;
  c.latent_dim = d;
  c.obs_dim = d;
  c.hidden = 16;
  c.context = 8;
  c.mode = mode;
  return c;
}

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

FunctionalMarginals constant_marginals(const Matrix& mu, const Matrix& sigma) {
  return FunctionalMarginals(
      mu.cols(), 1.0, [mu](const Dual& t) { return Dual(repeat_rows(Var(mu), t.rows())); },
      [sigma](const Dual& t) { return Dual(repeat_rows(Var(sigma), t.rows())); });
}

TEST(Posterior, ZeroNoiseGivesMean) {
  const NeuralPosterior post(posterior_config(2), 1);
  const TimeSeries x = small_series();
  const auto q = post.condition(Binding(post.params(), nullptr), x);
  const Var t = time_column(1, 0.4);
  const Matrix z = sample_posterior(*q, t, Var(Matrix::Zero(1, 2))).value();
  EXPECT_EQ(z, q->moments(t).mean.primal.value());
}

TEST(Posterior, UnitScaleShiftsByNoise) {
  const auto q = constant_marginals(row({0.3, -1.2}), row({1.0, 1.0}));
  const Matrix z = sample_posterior(q, time_column(1, 0.5), Var(row({1.0, 1.0}))).value();
  EXPECT_DOUBLE_EQ(z(0, 0), 1.3);
  EXPECT_DOUBLE_EQ(z(0, 1), -0.2);
}

TEST(Posterior, TimeOutsideHorizonThrows) {
  const auto q = constant_marginals(row({0.0}), row({1.0}));
  EXPECT_THROW(sample_posterior(q, time_column(1, 1.5), Var(row({0.0}))), std::domain_error);
  EXPECT_THROW(sample_posterior(q, time_column(1, -0.1), Var(row({0.0}))), std::domain_error);
}

TEST(Posterior, EmpiricalMeanMatchesMu) {
  const NeuralPosterior post(posterior_config(2), 2);
  const TimeSeries x = small_series();
  const auto q = post.condition(Binding(post.params(), nullptr), x);
  const Index n = 100000;
  Rng rng(17);
  const Matrix z = sample_posterior(*q, time_column(n, 0.35), Var(rng.normal_matrix(n, 2))).value();
  const Moments m = q->moments(time_column(1, 0.35));
  for (Index k = 0; k < 2; ++k) {
    const double mu = m.mean.primal.value()(0, k);
    const double sd = m.scale.primal.value()(0, k);
    EXPECT_LE(std::abs(z.col(k).mean() - mu), 4.0 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST(Posterior, InverseRoundTrip) {
  const NeuralPosterior post(posterior_config(3), 3);
  const TimeSeries x = small_series(3, 8, 5);
  const auto q = post.condition(Binding(post.params(), nullptr), x);
  Rng rng(1);
  Matrix t(50, 1);
  for (Index i = 0; i < 50; ++i) t(i, 0) = rng.uniform();
  const Matrix eps = rng.normal_matrix(50, 3);
  const Var z = sample_posterior(*q, Var(t), Var(eps));
  const Matrix back = invert_posterior(*q, Var(t), z).value();
  EXPECT_LE((back - eps).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Score, IdentityScale) {
  const auto q = constant_marginals(row({0.0, 0.0}), row({1.0, 1.0}));
  const Matrix s = posterior_score(q, time_column(1, 0.2), Var(row({0.5, -1.0}))).value();
  EXPECT_DOUBLE_EQ(s(0, 0), -0.5);
  EXPECT_DOUBLE_EQ(s(0, 1), 1.0);
}

TEST(Score, DiagonalScale) {
  const auto q = constant_marginals(row({0.0, 0.0}), row({2.0, 4.0}));
  const Matrix s = posterior_score(q, time_column(1, 0.2), Var(row({1.0, 1.0}))).value();
  EXPECT_DOUBLE_EQ(s(0, 0), -0.5);
  EXPECT_DOUBLE_EQ(s(0, 1), -0.25);
}

TEST(Score, MatchesGradientOfGaussianLogDensity) {
  const NeuralPosterior post(posterior_config(2), 6);
  const TimeSeries x = small_series();
  const auto q = post.condition(Binding(post.params(), nullptr), x);
  const Var t = time_column(1, 0.61);
  const Moments m = q->moments(t);
  const Matrix mu = m.mean.primal.value();
  const Matrix sd = m.scale.primal.value();
  Rng rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    const Matrix eps = rng.normal_matrix(1, 2);
    const Matrix z = mu + Matrix(sd.array() * eps.array());
    Tape tape;
    const Var zv = tape.leaf(z);
    // log N(z; mu, diag sd^2) written out term by term.
    const Var u = div(sub(zv, Var(mu)), Var(sd));
    const Var logq = sub(scale(sum(square(u)), -0.5),
                         Var::scalar(sd.array().log().sum() + std::log(2.0 * std::numbers::pi)));
    const Matrix grad = tape.backward(logq).front();
    const Matrix score = posterior_score(*q, t, Var(eps)).value();
    EXPECT_LE(max_rel_err(score, grad), 1e-10);
  }
}

TEST(OdeDrift, LinearMeanUnitScale) {
  const FunctionalMarginals q(
      2, 1.0, [](const Dual& t) { return concat_cols(std::vector<Dual>{t, t}); },
      [](const Dual& t) { return Dual(Var(Matrix::Ones(t.rows(), 2))); });
  Rng rng(2);
  const Matrix z = rng.normal_matrix(4, 2);
  const Matrix f = conditional_ode_drift(q, time_column(4, 0.3), Var(z)).value();
  EXPECT_LE((f.array() - 1.0).abs().maxCoeff(), 1e-15);
}

TEST(OdeDrift, ExponentialScale) {
  const FunctionalMarginals q(
      1, 1.0, [](const Dual& t) { return Dual(Var(Matrix::Zero(t.rows(), 1))); },
      [](const Dual& t) { return exp(t); });
  Matrix z(3, 1);
  z << -1.0, 0.25, 2.0;
  const Matrix f = conditional_ode_drift(q, time_column(3, 0.7), Var(z)).value();
  EXPECT_LE((f - z).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(OdeDrift, FlowTransportsSamples) {
  const NeuralPosterior post(posterior_config(2, ContextMode::kGlobal), 9);
  const TimeSeries x = small_series();
  const auto q = post.condition(Binding(post.params(), nullptr), x);
  Rng rng(8);
  const Matrix eps = rng.normal_matrix(3, 2);
  Matrix z = sample_posterior(*q, time_column(3, 0.0), Var(eps)).value();
  auto f = [&](const Matrix& zz, double t) {
    return conditional_ode_drift(*q, time_column(3, t), Var(zz)).value();
  };
  const int steps = 1000;
  const double h = 1.0 / steps;
  for (int n = 0; n < steps; ++n) {
    const double t = static_cast<double>(n) / steps;
    const Matrix k1 = f(z, t);
    const Matrix k2 = f(z + 0.5 * h * k1, t + 0.5 * h);
    const Matrix k3 = f(z + 0.5 * h * k2, t + 0.5 * h);
    const Matrix k4 = f(z + h * k3, t + h);
    z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  const Matrix target = sample_posterior(*q, time_column(3, 1.0), Var(eps)).value();
  EXPECT_LE(max_rel_err(z, target, 1e-3), 1e-4);
}

TEST(PosteriorDrift, ConstantDiffusionStandardMarginals) {
  const double c = 1.7;
  const FnPrior prior(1, [c](const Dual& z, const Var&) {
    return Dual(Var(Matrix::Constant(z.rows(), 1, c)));
  });
  const auto q = constant_marginals(row({0.0}), row({1.0}));
  Matrix eps(4, 1);
  eps << -2.0, -0.3, 0.0, 1.1;
  const PosteriorDrift d = posterior_drift_terms(prior, q, time_column(4, 0.5), Var(eps));
  EXPECT_LE((d.drift.value() + 0.5 * c * c * eps).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_TRUE(d.divergence.value().isZero(0.0));
}

TEST(PosteriorDrift, StateIndependentNeuralDiffusionHasNoDivergence) {
  PriorConfig pc;
  pc.latent_dim = 2;
  pc.obs_dim = 2;
  pc.hidden = 8;
  pc.state_dependent_diffusion = false;
  const NeuralPrior prior(pc, 1);
  const NeuralPosterior post(posterior_config(2), 1);
  const TimeSeries x = small_series();
  const auto p = prior.bind(Binding(prior.params(), nullptr));
  const auto q = post.condition(Binding(post.params(), nullptr), x);
  Rng rng(1);
  const PosteriorDrift d =
      posterior_drift_terms(*p, *q, time_column(5, 0.3), Var(rng.normal_matrix(5, 2)));
  EXPECT_TRUE(d.divergence.value().isZero(0.0));
}

TEST(PosteriorDrift, DivergenceOfIdentityDiffusion) {
  const FnPrior prior(1, [](const Dual& z, const Var&) { return z; });
  const auto q = constant_marginals(row({2.0}), row({1.0}));
  const PosteriorDrift d = posterior_drift_terms(prior, q, time_column(1, 0.5), Var(row({0.0})));
  EXPECT_DOUBLE_EQ(d.divergence.item(), 2.0);
}

TEST(PosteriorDrift, DriftIsSumOfTerms) {
  const NeuralPrior prior(PriorConfig{}, 3);
  const NeuralPosterior post(posterior_config(1), 3);
  const TimeSeries x = small_series(1);
  const auto p = prior.bind(Binding(prior.params(), nullptr));
  const auto q = post.condition(Binding(post.params(), nullptr), x);
  Rng rng(4);
  const PosteriorDrift d =
      posterior_drift_terms(*p, *q, time_column(6, 0.8), Var(rng.normal_matrix(6, 1)));
  const Matrix g2 = d.diffusion.value().array().square().matrix();
  const Matrix expect =
      d.ode_drift.value() + 0.5 * Matrix(g2.array() * d.score.value().array()) + d.divergence.value();
  EXPECT_LE((d.drift.value() - expect).cwiseAbs().maxCoeff(), 1e-14);
  // Divergence against central differences of g^2 / 2 in z.
  const double h = 1e-6;
  const Matrix z = d.z.value();
  const Matrix gp = prior_diffusion(*p, Var(Matrix(z.array() + h)), time_column(6, 0.8)).value();
  const Matrix gm = prior_diffusion(*p, Var(Matrix(z.array() - h)), time_column(6, 0.8)).value();
  const Matrix fd = 0.25 * (gp.array().square() - gm.array().square()).matrix() / h;
  EXPECT_LE(max_rel_err(d.divergence.value(), fd, 1e-8), 1e-5);
}

TEST(Prior, FreshDiffusionIsSoftplusZeroPlusFloor) {
  PriorConfig pc;
  pc.latent_dim = 3;
  pc.obs_dim = 2;
  const NeuralPrior prior(pc, 7);
  const auto p = prior.bind(Binding(prior.params(), nullptr));
  Rng rng(2);
  const Matrix g = prior_diffusion(*p, Var(rng.normal_matrix(5, 3)), time_column(5, 0.4)).value();
  EXPECT_LE((g.array() - (std::log(2.0) + pc.g_min)).abs().maxCoeff(), 1e-15);
}

TEST(Prior, DiffusionCoordinatesAreIndependent) {
  PriorConfig pc;
  pc.latent_dim = 3;
  const NeuralPrior prior(pc, 7);
  ParameterSet params = prior.params();
  Rng rng(9);
  for (std::size_t i = 0; i < params.size(); ++i) {
    params.value(i) = rng.normal_matrix(params.value(i).rows(), params.value(i).cols());
  }
  const auto p = prior.bind(Binding(params, nullptr));
  Matrix z = rng.normal_matrix(1, 3);
  const Matrix before = prior_diffusion(*p, Var(z), time_column(1, 0.2)).value();
  z(0, 2) += 0.75;
  const Matrix after = prior_diffusion(*p, Var(z), time_column(1, 0.2)).value();
  EXPECT_EQ(before(0, 0), after(0, 0));
  EXPECT_EQ(before(0, 1), after(0, 1));
  EXPECT_NE(before(0, 2), after(0, 2));
}

TEST(Prior, DriftGradientMatchesFiniteDifferences) {
  PriorConfig pc;
  pc.latent_dim = 2;
  pc.hidden = 8;
  const NeuralPrior prior(pc, 5);
  Rng rng(6);
  const Var z(rng.normal_matrix(3, 2));
  const Var t(Matrix::Constant(3, 1, 0.3));
  auto loss = [&](const ParameterSet& ps, Tape* tape) {
    return sum(square(prior.bind(Binding(ps, tape))->drift(z, t)));
  };
  Tape tape;
  const auto grads = tape.backward(loss(prior.params(), &tape));
  const auto w = *prior.params().find("prior.drift.0.weight");
  const Matrix fd = testing::numeric_gradient(
      [&](const Matrix& m) {
        ParameterSet copy = prior.params();
        copy.value(w) = m;
        return loss(copy, nullptr).item();
      },
      prior.params().value(w));
  EXPECT_LE(max_rel_err(grads[w], fd, 1e-6), 1e-4);
}

TEST(Prior, InvalidConfigThrows) {
  PriorConfig pc;
  pc.g_min = 0.0;
  EXPECT_THROW(NeuralPrior(pc, 0), std::invalid_argument);
  pc = PriorConfig{};
  pc.latent_dim = 0;
  EXPECT_THROW(NeuralPrior(pc, 0), std::invalid_argument);
}

TEST(ObsLoglik, UnitNoiseAtDecoderMean) {
  PriorConfig pc;
  pc.latent_dim = 2;
  pc.obs_dim = 3;
  const NeuralPrior prior(pc, 2);
  const auto p = prior.bind(Binding(prior.params(), nullptr));
  const Var z(random_matrix(1, 2, 3));
  const Var x = p->obs_mean(z);
  EXPECT_NEAR(obs_loglik(*p, x, z).item(), -1.5 * std::log(2.0 * std::numbers::pi), 1e-14);
}

TEST(ObsLoglik, DoubledNoiseLowersByLogTwoPerDim) {
  PriorConfig pc;
  pc.latent_dim = 2;
  pc.obs_dim = 3;
  const NeuralPrior prior(pc, 2);
  ParameterSet doubled = prior.params();
  doubled.value(*doubled.find("prior.log_obs_std")).setConstant(std::log(2.0));
  const auto p1 = prior.bind(Binding(prior.params(), nullptr));
  const auto p2 = prior.bind(Binding(doubled, nullptr));
  const Var z(random_matrix(1, 2, 3));
  const Var x = p1->obs_mean(z);
  EXPECT_NEAR(obs_loglik(*p1, x, z).item() - obs_loglik(*p2, x, z).item(), 3.0 * std::log(2.0),
              1e-13);
}

TEST(ObsLoglik, MatchesReferenceDensity) {
  PriorConfig pc;
  pc.latent_dim = 2;
  pc.obs_dim = 3;
  const NeuralPrior prior(pc, 4);
  ParameterSet ps = prior.params();
  ps.value(*ps.find("prior.log_obs_std")) = row({-0.5, 0.1, 0.7});
  const auto p = prior.bind(Binding(ps, nullptr));
  const Matrix z = random_matrix(4, 2, 5);
  const Matrix x = random_matrix(4, 3, 6);
  const Matrix got = obs_loglik(*p, Var(x), Var(z)).value();
  const Matrix mean = p->obs_mean(Var(z)).value();
  const Eigen::VectorXd sd = p->obs_std().value().row(0).transpose();
  const Matrix cov = sd.array().square().matrix().asDiagonal();
  const Eigen::LLT<Matrix> llt(cov);
  const double logdet = 2.0 * Eigen::VectorXd(Matrix(llt.matrixL()).diagonal()).array().log().sum();
  for (Index i = 0; i < 4; ++i) {
    const Eigen::VectorXd r = (x.row(i) - mean.row(i)).transpose();
    const double quad = r.dot(llt.solve(r));
    const double ref = -0.5 * (quad + logdet + 3.0 * std::log(2.0 * std::numbers::pi));
    EXPECT_LE(testing::rel_err(got(i, 0), ref), 1e-12);
  }
}

TEST(Context, InterpolatedIsContinuousWithMatchingTangent) {
  ParameterSet params;
  Rng rng(3);
  const ContextEncoder enc(params, "enc", 1, 4, ContextMode::kInterpolated, rng);
  const TimeSeries x = small_series(1, 5, 2);
  const auto e = enc.encode(Binding(params, nullptr), x);
  const double knot = x.times[2];
  const Matrix lo = e.at(time_column(1, knot - 1e-9)).primal.value();
  const Matrix hi = e.at(time_column(1, knot + 1e-9)).primal.value();
  EXPECT_LE((lo - hi).cwiseAbs().maxCoeff(), 1e-7);
  const double t = 0.6;
  const Dual c = e.at(time_column(1, t));
  const double h = 1e-6;
  const Matrix fd =
      (e.at(time_column(1, t + h)).primal.value() - e.at(time_column(1, t - h)).primal.value()) /
      (2.0 * h);
  EXPECT_LE(max_rel_err(c.tangent_or_zero().value(), fd, 1e-6), 1e-6);
}

TEST(Context, PiecewiseUsesNextObservation) {
  ParameterSet params;
  Rng rng(3);
  const ContextEncoder enc(params, "enc", 1, 4, ContextMode::kPiecewise, rng);
  const TimeSeries x = small_series(1, 5, 2);
  const auto e = enc.encode(Binding(params, nullptr), x);
  const Matrix c = e.at(time_column(1, 0.5 * (x.times[1] + x.times[2]))).primal.value();
  const std::vector<Index> second{2};
  EXPECT_EQ(c, gather_rows(e.states, second).value());
  EXPECT_FALSE(e.at(time_column(1, 0.3)).has_tangent());
}

TEST(LinearPriorProcess, MatchesSystem) {
  const LinearPrior prior(LinearSystemSpec::time_varying_scalar(0.04));
  const auto p = prior.bind(Binding(prior.params(), nullptr));
  Matrix z(2, 1), t(2, 1);
  z << 1.5, -2.0;
  t << 0.5, 0.25;
  const Matrix h = p->drift(Var(z), Var(t)).value();
  EXPECT_DOUBLE_EQ(h(0, 0), -0.75);
  EXPECT_DOUBLE_EQ(h(1, 0), 0.5);
  const Matrix g = prior_diffusion(*p, Var(z), Var(t)).value();
  EXPECT_DOUBLE_EQ(g(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(g(1, 0), 0.25);
  EXPECT_DOUBLE_EQ(prior_diffusion(*p, Var(z), time_column(2, 0.0)).value()(0, 0), prior.g_min());
  EXPECT_DOUBLE_EQ(p->obs_std().item(), 0.2);
}

}  // namespace
}  // namespace sdematch
