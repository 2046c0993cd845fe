#pragma once

// Exact inference for linear-Gaussian latent SDEs
//
//   dz = F(t) z dt + L(t) dw,   x_t = H z_t + r_t,  r_t ~ N(0, R),
//
// observed at discrete times. Transitions between consecutive grid times are
// obtained by integrating dPhi/dt = F Phi and dQ/dt = F Q + Q F^T + L L^T with
// RK4, so the predicted moments are m' = Phi m and P' = Phi P Phi^T + Q.

#include "sdematch/model.hpp"
#include "sdematch/timeseries.hpp"

#include <functional>
#include <vector>

namespace sdematch {

struct LinearSystemSpec {
  std::function<Matrix(double)> drift;  // F(t), D x D
  std::function<Matrix(double)> noise;  // L(t), D x D
  Matrix observation;                   // H, d_x x D
  Matrix obs_noise;                     // R, d_x x d_x
  Eigen::VectorXd m0;
  Matrix p0;
  double moment_step = 1e-4;

  Index latent_dim() const { return static_cast<Index>(m0.size()); }
  Index obs_dim() const { return observation.rows(); }

  // Scalar system F(t) = -t, L(t) = t, H = 1, R = obs_var, z_0 ~ N(0, 1).
  static LinearSystemSpec time_varying_scalar(double obs_var = 0.01);
  // F = L = 0: a static Gaussian state observed repeatedly.
  static LinearSystemSpec static_scalar(double prior_var, double obs_var);
};

struct Gaussian {
  Eigen::VectorXd mean;
  Matrix cov;
};

struct Transition {
  Matrix phi;
  Matrix q;
};

// Transition over [t0, t1]; RK4 with the largest step <= spec.moment_step
// that lands exactly on t1.
Transition linear_transition(const LinearSystemSpec& spec, double t0, double t1);

// Marginal p(z_t) of the prior process.
Gaussian prior_marginal(const LinearSystemSpec& spec, double t);

// log p(X). Throws NumericalError if an innovation covariance is not
// positive definite. extra_times are observation-free points the filter
// also steps through.
double kalman_loglik(const LinearSystemSpec& spec, const TimeSeries& x,
                     const std::vector<double>& extra_times = {});

// p(z_t | X) at each query time (Rauch-Tung-Striebel).
std::vector<Gaussian> kalman_smoother_marginals(const LinearSystemSpec& spec, const TimeSeries& x,
                                                const std::vector<double>& query);

// The linear system as a fixed (parameter-free) prior process. L(t) and R
// must be diagonal; the diffusion is floored at g_min.
class LinearPrior final : public PriorModel {
 public:
  explicit LinearPrior(LinearSystemSpec spec, double g_min = 1e-4);

  ParameterSet& params() override { return params_; }
  const ParameterSet& params() const override { return params_; }
  std::unique_ptr<PriorProcess> bind(const Binding& b) const override;
  const LinearSystemSpec& spec() const { return spec_; }
  double g_min() const { return g_min_; }

 private:
  LinearSystemSpec spec_;
  double g_min_;
  ParameterSet params_;
};

}  // namespace sdematch
