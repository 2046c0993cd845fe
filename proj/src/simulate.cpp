#include "sdematch/simulate.hpp"

#include "sdematch/data.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace sdematch {

namespace {

constexpr std::uint64_t kInitStream = std::uint64_t{1} << 40;
constexpr std::uint64_t kObsStream = std::uint64_t{2} << 40;

std::vector<Rng> path_streams(std::uint64_t seed, std::uint64_t offset, Index paths) {
  std::vector<Rng> out;
  out.reserve(static_cast<std::size_t>(paths));
  for (Index p = 0; p < paths; ++p) out.emplace_back(seed, offset + static_cast<std::uint64_t>(p));
  return out;
}

Matrix draw(std::vector<Rng>& streams, Index cols) {
  Matrix m(static_cast<Index>(streams.size()), cols);
  for (std::size_t p = 0; p < streams.size(); ++p) {
    for (Index k = 0; k < cols; ++k) m(static_cast<Index>(p), k) = streams[p].normal();
  }
  return m;
}

void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("empty time grid");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw std::invalid_argument("time grid must be strictly increasing");
  }
}

// Evaluation-only view of the prior (constant bindings).
struct BoundPrior {
  explicit BoundPrior(const PriorModel& m) : binding(m.params(), nullptr), process(m.bind(binding)) {}
  Binding binding;
  std::unique_ptr<PriorProcess> process;
};

}  // namespace

const Matrix& TrajectoryBatch::at(double t) const {
  const auto it = std::find(times.begin(), times.end(), t);
  if (it == times.end()) throw std::out_of_range("time " + std::to_string(t) + " not on the grid");
  return states[static_cast<std::size_t>(it - times.begin())];
}

std::vector<double> uniform_grid(double t0, double t1, Index steps) {
  if (steps <= 0 || !(t1 > t0)) throw std::invalid_argument("uniform_grid: need t1 > t0 and steps > 0");
  std::vector<double> g(static_cast<std::size_t>(steps) + 1);
  for (Index n = 0; n <= steps; ++n) {
    g[static_cast<std::size_t>(n)] = t0 + (t1 - t0) * static_cast<double>(n) / static_cast<double>(steps);
  }
  g.back() = t1;
  return g;
}

std::vector<double> refine_grid(double start, const std::vector<double>& points, double max_step) {
  if (!(max_step > 0.0)) throw std::invalid_argument("refine_grid: max_step must be positive");
  std::vector<double> pts = points;
  pts.push_back(start);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.front() < start) throw std::invalid_argument("refine_grid: point before start");
  std::vector<double> out{pts.front()};
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double a = pts[i - 1];
    const double b = pts[i];
    const auto n = static_cast<long>(std::ceil((b - a) / max_step - 1e-9));
    for (long k = 1; k < n; ++k) out.push_back(a + (b - a) * static_cast<double>(k) / static_cast<double>(n));
    out.push_back(b);
  }
  return out;
}

TrajectoryBatch euler_maruyama(const VectorField& drift, const VectorField& diffusion,
                               const Matrix& z0, const std::vector<double>& grid,
                               std::uint64_t seed) {
  check_grid(grid);
  if (!all_finite(z0)) throw NumericalError("euler_maruyama: non-finite initial state");
  TrajectoryBatch out;
  out.times = grid;
  out.seed = seed;
  out.states.assign(grid.size(), Matrix(z0.rows(), z0.cols()));
  out.states.front() = z0;
  // Paths are integrated in blocks of rows; each path has its own stream, so
  // the blocking does not change the result.
  constexpr Index kBlock = 256;
  for (Index r0 = 0; r0 < z0.rows(); r0 += kBlock) {
    const Index rows = std::min(kBlock, z0.rows() - r0);
    std::vector<Rng> streams;
    streams.reserve(static_cast<std::size_t>(rows));
    for (Index p = 0; p < rows; ++p) streams.emplace_back(seed, static_cast<std::uint64_t>(r0 + p));
    Matrix z = z0.middleRows(r0, rows);
    for (std::size_t n = 0; n + 1 < grid.size(); ++n) {
      const double t = grid[n];
      const double dt = grid[n + 1] - t;
      const Matrix xi = draw(streams, z.cols());
      const Matrix f = drift(z, t);
      const Matrix g = diffusion(z, t);
      z += dt * f + std::sqrt(dt) * g.cwiseProduct(xi);
      if (!all_finite(z)) {
        throw NumericalError("euler_maruyama: non-finite state at step " + std::to_string(n + 1) +
                             " (t=" + std::to_string(grid[n + 1]) + ")");
      }
      out.states[n + 1].middleRows(r0, rows) = z;
    }
  }
  return out;
}

namespace {

VectorField prior_drift_field(const PriorProcess& p) {
  return [&p](const Matrix& z, double t) {
    return p.drift(Var(z), time_column(z.rows(), t)).value();
  };
}

VectorField prior_diffusion_field(const PriorProcess& p) {
  return [&p](const Matrix& z, double t) {
    return p.diffusion(Dual(Var(z)), time_column(z.rows(), t)).primal.value();
  };
}

}  // namespace

PriorSample sample_prior(const PriorModel& prior, const std::vector<double>& grid, Index paths,
                         std::uint64_t seed) {
  check_grid(grid);
  if (paths <= 0) throw std::invalid_argument("sample_prior: paths must be positive");
  if (grid.front() != 0.0) throw std::invalid_argument("sample_prior: grid must start at 0");
  const BoundPrior bp(prior);
  const PriorProcess& p = *bp.process;
  auto init = path_streams(seed, kInitStream, paths);
  const Matrix e0 = draw(init, p.latent_dim());
  const Matrix z0 = (e0.array().rowwise() * p.initial_std().value().row(0).array()).rowwise() +
                    p.initial_mean().value().row(0).array();
  PriorSample out;
  out.latent = euler_maruyama(prior_drift_field(p), prior_diffusion_field(p), z0, grid, seed);
  auto obs = path_streams(seed, kObsStream, paths);
  const Eigen::RowVectorXd r = p.obs_std().value().row(0);
  for (const Matrix& z : out.latent.states) {
    const Matrix mean = p.obs_mean(Var(z)).value();
    const Matrix e = draw(obs, p.obs_dim());
    out.observations.push_back(mean + (e.array().rowwise() * r.array()).matrix());
  }
  return out;
}

TrajectoryBatch forecast(const PriorModel& prior, const PosteriorModel& posterior,
                         const TimeSeries& x, const std::vector<double>& horizon,
                         const ForecastOptions& opt) {
  check_grid(horizon);
  if (x.size() == 0) throw std::invalid_argument("forecast: empty time series");
  const double t_last = x.times.back();
  if (horizon.front() < t_last) {
    throw std::invalid_argument("forecast: horizon starts at " + std::to_string(horizon.front()) +
                                ", before the last observation at " + std::to_string(t_last));
  }
  const BoundPrior bp(prior);
  const Binding qb(posterior.params(), nullptr);
  const auto q = posterior.condition(qb, x);
  auto init = path_streams(opt.seed, kInitStream, opt.paths);
  const Matrix eps = draw(init, q->latent_dim());
  const Matrix z0 = sample_posterior(*q, time_column(opt.paths, t_last), Var(eps)).value();

  const std::vector<double> fine = refine_grid(t_last, horizon, opt.max_step);
  const TrajectoryBatch full = euler_maruyama(prior_drift_field(*bp.process),
                                              prior_diffusion_field(*bp.process), z0, fine, opt.seed);
  TrajectoryBatch out;
  out.times = horizon;
  out.seed = opt.seed;
  for (double t : horizon) out.states.push_back(full.at(t));
  return out;
}

TrajectoryBatch simulate_posterior_sde(const PriorModel& prior, const PosteriorModel& posterior,
                                       const TimeSeries& x, const std::vector<double>& grid,
                                       Index paths, std::uint64_t seed) {
  check_grid(grid);
  if (grid.front() != 0.0) throw std::invalid_argument("simulate_posterior_sde: grid must start at 0");
  if (grid.back() > x.horizon) throw std::domain_error("simulate_posterior_sde: grid exceeds horizon");
  const BoundPrior bp(prior);
  const Binding qb(posterior.params(), nullptr);
  const auto q = posterior.condition(qb, x);
  auto init = path_streams(seed, kInitStream, paths);
  const Matrix eps0 = draw(init, q->latent_dim());
  const Matrix z0 = sample_posterior(*q, time_column(paths, 0.0), Var(eps0)).value();

  // The marginal parameters depend on t only: evaluate them once per step.
  Matrix g_last;
  auto drift = [&](const Matrix& z, double t) -> Matrix {
    const Moments m = q->moments(time_column(1, t));
    const Var eps = div(sub(Var(z), m.mean.primal), m.scale.primal);
    const PosteriorDrift d = posterior_drift_terms(*bp.process, m, time_column(z.rows(), t), eps);
    g_last = d.diffusion.value();
    return d.drift.value();
  };
  // Called right after drift at the same (z, t).
  auto diffusion = [&](const Matrix&, double) -> Matrix { return g_last; };
  return euler_maruyama(drift, diffusion, z0, grid, seed);
}

void write_trajectories(std::ostream& out, const TrajectoryBatch& batch,
                        const std::vector<Matrix>* observations) {
  const Index d = batch.dim();
  const Index dx = observations != nullptr && !observations->empty() ? observations->front().cols() : 0;
  out << "path,t";
  for (Index k = 0; k < d; ++k) out << ",z_" << k + 1;
  for (Index k = 0; k < dx; ++k) out << ",x_" << k + 1;
  out << '\n';
  for (Index p = 0; p < batch.paths(); ++p) {
    for (std::size_t n = 0; n < batch.times.size(); ++n) {
      out << p << ',' << format_double(batch.times[n]);
      for (Index k = 0; k < d; ++k) out << ',' << format_double(batch.states[n](p, k));
      for (Index k = 0; k < dx; ++k) out << ',' << format_double((*observations)[n](p, k));
      out << '\n';
    }
  }
}

}  // namespace sdematch
