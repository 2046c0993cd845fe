#pragma once

// Synthetic datasets and their on-disk format.
//
// File format: the first line is a single JSON object with the metadata
// (generator, parameters, seed, horizon, column names); each further line is
// a CSV row  series_id,t,x_1,...,x_d  with numbers written in shortest
// round-trip form, so a written dataset reads back bit-identical.

#include "sdematch/oracle.hpp"
#include "sdematch/timeseries.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace sdematch {

struct Dataset {
  std::vector<TimeSeries> series;
  std::vector<Matrix> latents;  // N x D latent states at the observation times, if known
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

  std::size_t size() const { return series.size(); }
};

// t_i = i * T / (N - 1), i = 0..N-1 (N = 1 gives t = T).
std::vector<double> uniform_times(Index n, double horizon);

struct SimulationOptions {
  Index n_obs = 100;
  double horizon = 1.0;
  Index n_series = 1;
  std::uint64_t seed = 0;
  double step = 1e-4;  // Euler-Maruyama step
};

// Euler-Maruyama simulation of the linear system, observed with noise R
// (exactly H z when R = 0).
Dataset gen_linear(const LinearSystemSpec& spec, const SimulationOptions& opt);

struct LorenzParams {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
  double diffusion = 0.3;
  double obs_var = 0.01;
  Eigen::Vector3d init_mean = Eigen::Vector3d::Zero();
  double init_std = 1.0;  // z_0 ~ N(init_mean, init_std^2 I)
  double blowup = 1e6;
};

// Stochastic Lorenz attractor. Throws NumericalError if |z| exceeds
// params.blowup.
Dataset gen_lorenz(const LorenzParams& params, const SimulationOptions& opt);

struct LotkaVolterraParams {
  double alpha = 2.0 / 3.0;
  double beta = -4.0 / 3.0;
  double delta = 1.0;
  double gamma = -1.0;
  double sigma = 0.15;  // independent multiplicative noise per species
  double x0 = 1.0;
  double y0 = 1.0;
  double obs_var = 0.0;
};

// dx = (alpha x + beta x y) dt + sigma x dw1,  dy = (delta x y + gamma y) dt + sigma y dw2.
// Integrated in log coordinates, so populations stay positive; a zero initial
// population stays at zero.
Dataset gen_lotka_volterra(const LotkaVolterraParams& params, const SimulationOptions& opt);

// delta x + gamma log x - beta y - alpha log y; constant along noise-free paths.
double lotka_volterra_invariant(const LotkaVolterraParams& params, double x, double y);

// Throws std::runtime_error (with the path) if the file cannot be opened, and
// std::invalid_argument on malformed content.
void write_dataset(const Dataset& data, std::ostream& out);
void write_dataset(const Dataset& data, const std::string& path);
Dataset read_dataset(std::istream& in);
Dataset read_dataset(const std::string& path);

// Shortest representation that parses back to the same double.
std::string format_double(double v);

// Per-coordinate standardization over every observation of every series.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const std::vector<TimeSeries>& series);
  TimeSeries apply(const TimeSeries& x) const;
  Matrix invert(const Matrix& values) const;
};

}  // namespace sdematch
