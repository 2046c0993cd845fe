#pragma once

// Euler-Maruyama integration of diagonal-noise SDEs, prior sampling,
// forecasting from the posterior marginals, and simulation of the posterior
// SDE (validation only; training never integrates anything).
//
// Path p draws its noise from stream p of the seed, so a path does not depend
// on how many other paths are simulated with it.

#include "sdematch/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

namespace sdematch {

struct TrajectoryBatch {
  std::vector<double> times;   // M, strictly increasing
  std::vector<Matrix> states;  // M entries of P x D
  std::uint64_t seed = 0;

  Index paths() const { return states.empty() ? 0 : states.front().rows(); }
  Index dim() const { return states.empty() ? 0 : states.front().cols(); }
  // State at a grid time (exact match required).
  const Matrix& at(double t) const;
};

using VectorField = std::function<Matrix(const Matrix& z, double t)>;  // P x D -> P x D

// z_{n+1} = z_n + drift dt + diffusion sqrt(dt) xi. Throws NumericalError
// naming the step index when a state becomes non-finite.
TrajectoryBatch euler_maruyama(const VectorField& drift, const VectorField& diffusion,
                               const Matrix& z0, const std::vector<double>& grid,
                               std::uint64_t seed);

// t0, t0 + dt, ..., t1 with `steps` equal steps.
std::vector<double> uniform_grid(double t0, double t1, Index steps);
// Sorted union of `points` and a refinement with spacing <= max_step between
// consecutive times, starting at `start`.
std::vector<double> refine_grid(double start, const std::vector<double>& points, double max_step);

struct PriorSample {
  TrajectoryBatch latent;
  std::vector<Matrix> observations;  // per grid time, P x d_x
};

// z_0 ~ p(z_0), integrate the prior SDE on `grid` (which must start at 0),
// decode noisy observations at every grid time.
PriorSample sample_prior(const PriorModel& prior, const std::vector<double>& grid, Index paths,
                         std::uint64_t seed);

struct ForecastOptions {
  Index paths = 100;
  double max_step = 1e-3;
  std::uint64_t seed = 0;
};

// z_{t_N} ~ q(z_{t_N}|X) (no simulation), then the prior SDE forward. States
// are reported at `horizon` times, each >= t_N; throws std::invalid_argument
// when the first horizon time precedes t_N.
TrajectoryBatch forecast(const PriorModel& prior, const PosteriorModel& posterior,
                         const TimeSeries& x, const std::vector<double>& horizon,
                         const ForecastOptions& opt);

// z_0 ~ q(z_0|X), then the posterior SDE dz = f dt + g dw on `grid`
// (starting at 0, inside [0, horizon]).
TrajectoryBatch simulate_posterior_sde(const PriorModel& prior, const PosteriorModel& posterior,
                                       const TimeSeries& x, const std::vector<double>& grid,
                                       Index paths, std::uint64_t seed);

// CSV: path, t, z_1..z_D[, x_1..x_dx].
void write_trajectories(std::ostream& out, const TrajectoryBatch& batch,
                        const std::vector<Matrix>* observations = nullptr);

}  // namespace sdematch
