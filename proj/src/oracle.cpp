#include "sdematch/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sdematch {

LinearSystemSpec LinearSystemSpec::time_varying_scalar(double obs_var) {
  LinearSystemSpec s;
  s.drift = [](double t) { return Matrix::Constant(1, 1, -t); };
  s.noise = [](double t) { return Matrix::Constant(1, 1, t); };
  s.observation = Matrix::Ones(1, 1);
  s.obs_noise = Matrix::Constant(1, 1, obs_var);
  s.m0 = Eigen::VectorXd::Zero(1);
  s.p0 = Matrix::Ones(1, 1);
  return s;
}

LinearSystemSpec LinearSystemSpec::static_scalar(double prior_var, double obs_var) {
  LinearSystemSpec s;
  s.drift = [](double) { return Matrix::Zero(1, 1); };
  s.noise = [](double) { return Matrix::Zero(1, 1); };
  s.observation = Matrix::Ones(1, 1);
  s.obs_noise = Matrix::Constant(1, 1, obs_var);
  s.m0 = Eigen::VectorXd::Zero(1);
  s.p0 = Matrix::Constant(1, 1, prior_var);
  return s;
}

Transition linear_transition(const LinearSystemSpec& spec, double t0, double t1) {
  const Index d = spec.latent_dim();
  Transition tr{Matrix::Identity(d, d), Matrix::Zero(d, d)};
  if (t1 < t0) throw std::invalid_argument("linear_transition: t1 < t0");
  if (t1 == t0) return tr;
  const auto steps = static_cast<long>(std::ceil((t1 - t0) / spec.moment_step - 1e-9));
  const double h = (t1 - t0) / static_cast<double>(steps);

  auto dphi = [&](double t, const Matrix& phi) -> Matrix { return spec.drift(t) * phi; };
  auto dq = [&](double t, const Matrix& q) -> Matrix {
    const Matrix f = spec.drift(t);
    const Matrix l = spec.noise(t);
    return f * q + q * f.transpose() + l * l.transpose();
  };
  for (long n = 0; n < steps; ++n) {
    const double t = t0 + static_cast<double>(n) * h;
    const Matrix k1 = dphi(t, tr.phi);
    const Matrix k2 = dphi(t + 0.5 * h, tr.phi + 0.5 * h * k1);
    const Matrix k3 = dphi(t + 0.5 * h, tr.phi + 0.5 * h * k2);
    const Matrix k4 = dphi(t + h, tr.phi + h * k3);
    const Matrix j1 = dq(t, tr.q);
    const Matrix j2 = dq(t + 0.5 * h, tr.q + 0.5 * h * j1);
    const Matrix j3 = dq(t + 0.5 * h, tr.q + 0.5 * h * j2);
    const Matrix j4 = dq(t + h, tr.q + h * j3);
    tr.phi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    tr.q += (h / 6.0) * (j1 + 2.0 * j2 + 2.0 * j3 + j4);
  }
  return tr;
}

Gaussian prior_marginal(const LinearSystemSpec& spec, double t) {
  const Transition tr = linear_transition(spec, 0.0, t);
  return {tr.phi * spec.m0, tr.phi * spec.p0 * tr.phi.transpose() + tr.q};
}

namespace {

struct GridPoint {
  double t;
  int obs = -1;  // observation row, or -1
};

std::vector<GridPoint> make_grid(const TimeSeries& x, const std::vector<double>& extra) {
  std::vector<GridPoint> grid;
  grid.push_back({0.0});
  for (Index i = 0; i < x.size(); ++i) grid.push_back({x.times[static_cast<std::size_t>(i)], static_cast<int>(i)});
  for (double t : extra) {
    if (t < 0.0) throw std::invalid_argument("grid time must be non-negative");
    grid.push_back({t});
  }
  std::stable_sort(grid.begin(), grid.end(),
                   [](const GridPoint& a, const GridPoint& b) { return a.t < b.t; });
  // Merge coincident times, keeping the observation if any.
  std::vector<GridPoint> out;
  for (const GridPoint& p : grid) {
    if (!out.empty() && out.back().t == p.t) {
      if (p.obs >= 0) {
        if (out.back().obs >= 0) throw std::invalid_argument("duplicate observation time");
        out.back().obs = p.obs;
      }
    } else {
      out.push_back(p);
    }
  }
  return out;
}

struct FilterTrace {
  std::vector<GridPoint> grid;
  std::vector<Gaussian> predicted;
  std::vector<Gaussian> filtered;
  std::vector<Matrix> phi;  // phi[k]: transition from grid[k-1] to grid[k]
  double loglik = 0.0;
};

FilterTrace run_filter(const LinearSystemSpec& spec, const TimeSeries& x,
                       const std::vector<double>& extra) {
  x.validate();
  if (x.dim() != spec.obs_dim()) {
    throw ShapeError("kalman: observation dimension " + std::to_string(x.dim()) +
                     " does not match H with " + std::to_string(spec.obs_dim()) + " rows");
  }
  FilterTrace tr;
  tr.grid = make_grid(x, extra);
  const Matrix& h = spec.observation;
  const Index d = spec.latent_dim();
  Gaussian cur{spec.m0, spec.p0};
  double prev_t = 0.0;
  for (std::size_t k = 0; k < tr.grid.size(); ++k) {
    const GridPoint& p = tr.grid[k];
    const Transition step = linear_transition(spec, prev_t, p.t);
    cur = {step.phi * cur.mean, step.phi * cur.cov * step.phi.transpose() + step.q};
    tr.phi.push_back(step.phi);
    tr.predicted.push_back(cur);
    if (p.obs >= 0) {
      const Eigen::VectorXd xv = x.values.row(p.obs).transpose();
      const Matrix s = h * cur.cov * h.transpose() + spec.obs_noise;
      const Eigen::LLT<Matrix> llt(s);
      if (llt.info() != Eigen::Success || !(s.diagonal().array() > 0.0).all()) {
        throw NumericalError("kalman: innovation covariance is not positive definite at t=" +
                             std::to_string(p.t));
      }
      const Eigen::VectorXd v = xv - h * cur.mean;
      const Eigen::VectorXd sv = llt.solve(v);
      const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      tr.loglik += -0.5 * (v.dot(sv) + logdet +
                           static_cast<double>(xv.size()) * std::log(2.0 * std::numbers::pi));
      const Matrix k_gain = llt.solve(h * cur.cov).transpose();
      const Matrix ikh = Matrix::Identity(d, d) - k_gain * h;
      cur.mean += k_gain * v;
      cur.cov = ikh * cur.cov * ikh.transpose() + k_gain * spec.obs_noise * k_gain.transpose();
    }
    tr.filtered.push_back(cur);
    prev_t = p.t;
  }
  return tr;
}

}  // namespace

double kalman_loglik(const LinearSystemSpec& spec, const TimeSeries& x,
                     const std::vector<double>& extra_times) {
  return run_filter(spec, x, extra_times).loglik;
}

std::vector<Gaussian> kalman_smoother_marginals(const LinearSystemSpec& spec, const TimeSeries& x,
                                                const std::vector<double>& query) {
  const FilterTrace tr = run_filter(spec, x, query);
  const std::size_t n = tr.grid.size();
  std::vector<Gaussian> smoothed(n);
  smoothed[n - 1] = tr.filtered[n - 1];
  for (std::size_t k = n - 1; k-- > 0;) {
    const Matrix& pf = tr.filtered[k].cov;
    const Matrix& pp = tr.predicted[k + 1].cov;
    const Matrix gain = pp.ldlt().solve(tr.phi[k + 1] * pf).transpose();
    smoothed[k].mean =
        tr.filtered[k].mean + gain * (smoothed[k + 1].mean - tr.predicted[k + 1].mean);
    smoothed[k].cov = pf + gain * (smoothed[k + 1].cov - pp) * gain.transpose();
  }
  std::vector<Gaussian> out;
  out.reserve(query.size());
  for (double t : query) {
    auto it = std::find_if(tr.grid.begin(), tr.grid.end(),
                           [t](const GridPoint& p) { return p.t == t; });
    out.push_back(smoothed[static_cast<std::size_t>(it - tr.grid.begin())]);
  }
  return out;
}

// ---- linear prior ---------------------------------------------------------

LinearPrior::LinearPrior(LinearSystemSpec spec, double g_min) : spec_(std::move(spec)), g_min_(g_min) {
  const Matrix l0 = spec_.noise(0.0);
  if (!l0.isDiagonal() || !spec_.obs_noise.isDiagonal()) {
    throw std::invalid_argument("LinearPrior requires diagonal L(t) and R");
  }
}

namespace {

class LinearPriorProcess final : public PriorProcess {
 public:
  LinearPriorProcess(const LinearSystemSpec& spec, double g_min) : s_(spec), g_min_(g_min) {}

  Index latent_dim() const override { return s_.latent_dim(); }
  Index obs_dim() const override { return s_.obs_dim(); }

  Var drift(const Var& z, const Var& t) const override {
    const Index rows = z.rows();
    const Index d = s_.latent_dim();
    // drift row b = F(t_b) z_b, assembled column by column of F.
    std::vector<Matrix> coeff(static_cast<std::size_t>(d), Matrix(rows, d));
    for (Index b = 0; b < rows; ++b) {
      const Matrix f = s_.drift(t.value()(b, 0));
      for (Index j = 0; j < d; ++j) coeff[static_cast<std::size_t>(j)].row(b) = f.col(j).transpose();
    }
    Var out = mul(slice_cols(z, 0, 1), Var(coeff[0]));
    for (Index j = 1; j < d; ++j) {
      out = add(out, mul(slice_cols(z, j, 1), Var(coeff[static_cast<std::size_t>(j)])));
    }
    return out;
  }

  Dual diffusion(const Dual& z, const Var& t) const override {
    Matrix g(z.rows(), s_.latent_dim());
    for (Index b = 0; b < z.rows(); ++b) {
      g.row(b) = s_.noise(t.value()(b, 0)).diagonal().transpose().cwiseAbs().cwiseMax(g_min_);
    }
    return Dual(Var(std::move(g)));
  }

  Var obs_mean(const Var& z) const override {
    return matmul(z, Var(s_.observation.transpose()));
  }
  Var obs_std() const override {
    return Var(Matrix(s_.obs_noise.diagonal().transpose().cwiseSqrt()));
  }
  Var initial_mean() const override { return Var(Matrix(s_.m0.transpose())); }
  Var initial_std() const override { return Var(Matrix(s_.p0.diagonal().transpose().cwiseSqrt())); }

 private:
  const LinearSystemSpec& s_;
  double g_min_;
};

}  // namespace

std::unique_ptr<PriorProcess> LinearPrior::bind(const Binding&) const {
  return std::make_unique<LinearPriorProcess>(spec_, g_min_);
}

}  // namespace sdematch
