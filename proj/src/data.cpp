#include "sdematch/data.hpp"

#include "sdematch/rng.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace sdematch {

std::vector<double> uniform_times(Index n, double horizon) {
  if (n <= 0) throw std::invalid_argument("need at least one observation");
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  if (n == 1) return {horizon};
  std::vector<double> t(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    t[static_cast<std::size_t>(i)] = static_cast<double>(i) * horizon / static_cast<double>(n - 1);
  }
  t.back() = horizon;
  return t;
}

namespace {

// Symmetric PSD square root (handles singular covariances such as R = 0).
Matrix psd_sqrt(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

void check_options(const SimulationOptions& opt) {
  if (opt.n_obs <= 0 || opt.n_series <= 0 || !(opt.horizon > 0.0) || !(opt.step > 0.0)) {
    throw std::invalid_argument("simulation options must be positive");
  }
}

// Steps from t0 to t1 with the largest step <= max_step landing on t1.
template <typename Step>
void integrate(double t0, double t1, double max_step, Step&& step) {
  if (t1 <= t0) return;
  const auto n = static_cast<long>(std::ceil((t1 - t0) / max_step - 1e-9));
  const double h = (t1 - t0) / static_cast<double>(n);
  for (long k = 0; k < n; ++k) step(t0 + static_cast<double>(k) * h, h);
}

nlohmann::ordered_json base_metadata(const std::string& name, const SimulationOptions& opt,
                                     Index obs_dim) {
  nlohmann::ordered_json m;
  m["generator"] = name;
  m["seed"] = opt.seed;
  m["n_series"] = opt.n_series;
  m["n_obs"] = opt.n_obs;
  m["horizon"] = opt.horizon;
  m["step"] = opt.step;
  m["obs_dim"] = obs_dim;
  return m;
}

}  // namespace

Dataset gen_linear(const LinearSystemSpec& spec, const SimulationOptions& opt) {
  check_options(opt);
  const Index d = spec.latent_dim();
  const Index dx = spec.obs_dim();
  const std::vector<double> times = uniform_times(opt.n_obs, opt.horizon);
  const Matrix p0_sqrt = psd_sqrt(spec.p0);
  const Matrix r_sqrt = psd_sqrt(spec.obs_noise);

  // All series advance together; each draws from its own stream.
  const Index b = opt.n_series;
  std::vector<Rng> path_rng, obs_rng;
  for (Index s = 0; s < b; ++s) {
    path_rng.emplace_back(opt.seed, 2 * static_cast<std::uint64_t>(s));
    obs_rng.emplace_back(opt.seed, 2 * static_cast<std::uint64_t>(s) + 1);
  }
  Matrix z(b, d);
  for (Index s = 0; s < b; ++s) {
    Eigen::VectorXd e(d);
    for (Index k = 0; k < d; ++k) e(k) = path_rng[static_cast<std::size_t>(s)].normal();
    z.row(s) = (spec.m0 + p0_sqrt * e).transpose();
  }

  Dataset data;
  data.series.resize(static_cast<std::size_t>(b));
  data.latents.assign(static_cast<std::size_t>(b), Matrix(opt.n_obs, d));
  for (auto& x : data.series) {
    x.times = times;
    x.horizon = opt.horizon;
    x.values.resize(opt.n_obs, dx);
  }
  Matrix noise(b, d);
  double t_prev = 0.0;
  for (Index i = 0; i < opt.n_obs; ++i) {
    const double ti = times[static_cast<std::size_t>(i)];
    integrate(t_prev, ti, opt.step, [&](double t, double h) {
      const Matrix f = spec.drift(t);
      const Matrix l = spec.noise(t);
      for (Index s = 0; s < b; ++s) {
        Rng& rng = path_rng[static_cast<std::size_t>(s)];
        for (Index k = 0; k < d; ++k) noise(s, k) = rng.normal();
      }
      z += h * z * f.transpose() + std::sqrt(h) * noise * l.transpose();
    });
    t_prev = ti;
    for (Index s = 0; s < b; ++s) {
      Eigen::VectorXd e(dx);
      for (Index k = 0; k < dx; ++k) e(k) = obs_rng[static_cast<std::size_t>(s)].normal();
      const Eigen::VectorXd zs = z.row(s).transpose();
      data.latents[static_cast<std::size_t>(s)].row(i) = zs.transpose();
      data.series[static_cast<std::size_t>(s)].values.row(i) =
          (spec.observation * zs + r_sqrt * e).transpose();
    }
  }
  data.metadata = base_metadata("linear", opt, dx);
  data.metadata["latent_dim"] = d;
  data.metadata["obs_var"] = spec.obs_noise(0, 0);
  return data;
}

Dataset gen_lorenz(const LorenzParams& p, const SimulationOptions& opt) {
  check_options(opt);
  const std::vector<double> times = uniform_times(opt.n_obs, opt.horizon);
  const double obs_std = std::sqrt(p.obs_var);
  Dataset data;
  for (Index s = 0; s < opt.n_series; ++s) {
    Rng rng(opt.seed, 2 * static_cast<std::uint64_t>(s));
    Rng obs_rng(opt.seed, 2 * static_cast<std::uint64_t>(s) + 1);
    Eigen::Vector3d z;
    for (int k = 0; k < 3; ++k) z(k) = p.init_mean(k) + p.init_std * rng.normal();
    TimeSeries x;
    x.times = times;
    x.horizon = opt.horizon;
    x.values.resize(opt.n_obs, 3);
    Matrix lat(opt.n_obs, 3);
    double t_prev = 0.0;
    for (Index i = 0; i < opt.n_obs; ++i) {
      const double ti = times[static_cast<std::size_t>(i)];
      integrate(t_prev, ti, opt.step, [&](double t, double h) {
        const Eigen::Vector3d f(p.sigma * (z(1) - z(0)), z(0) * (p.rho - z(2)) - z(1),
                                z(0) * z(1) - p.beta * z(2));
        const double sh = std::sqrt(h);
        Eigen::Vector3d w;
        for (int k = 0; k < 3; ++k) w(k) = rng.normal();
        z += h * f + p.diffusion * sh * w;
        if (!z.allFinite() || z.norm() > p.blowup) {
          throw NumericalError("lorenz: state blew up at t=" + std::to_string(t + h) +
                               " in series " + std::to_string(s));
        }
      });
      t_prev = ti;
      lat.row(i) = z.transpose();
      for (int k = 0; k < 3; ++k) x.values(i, k) = z(k) + obs_std * obs_rng.normal();
    }
    data.series.push_back(std::move(x));
    data.latents.push_back(std::move(lat));
  }
  data.metadata = base_metadata("lorenz", opt, 3);
  data.metadata["sigma"] = p.sigma;
  data.metadata["rho"] = p.rho;
  data.metadata["beta"] = p.beta;
  data.metadata["diffusion"] = p.diffusion;
  data.metadata["obs_var"] = p.obs_var;
  data.metadata["init_mean"] = {p.init_mean(0), p.init_mean(1), p.init_mean(2)};
  data.metadata["init_std"] = p.init_std;
  return data;
}

double lotka_volterra_invariant(const LotkaVolterraParams& p, double x, double y) {
  return p.delta * x + p.gamma * std::log(x) - p.beta * y - p.alpha * std::log(y);
}

Dataset gen_lotka_volterra(const LotkaVolterraParams& p, const SimulationOptions& opt) {
  check_options(opt);
  if (p.x0 < 0.0 || p.y0 < 0.0) throw std::invalid_argument("populations must be non-negative");
  const std::vector<double> times = uniform_times(opt.n_obs, opt.horizon);
  const double obs_std = std::sqrt(p.obs_var);
  const double ito = 0.5 * p.sigma * p.sigma;
  Dataset data;
  for (Index s = 0; s < opt.n_series; ++s) {
    Rng rng(opt.seed, 2 * static_cast<std::uint64_t>(s));
    Rng obs_rng(opt.seed, 2 * static_cast<std::uint64_t>(s) + 1);
    const bool x_alive = p.x0 > 0.0;
    const bool y_alive = p.y0 > 0.0;
    double lx = x_alive ? std::log(p.x0) : 0.0;
    double ly = y_alive ? std::log(p.y0) : 0.0;
    TimeSeries x;
    x.times = times;
    x.horizon = opt.horizon;
    x.values.resize(opt.n_obs, 2);
    Matrix lat(opt.n_obs, 2);
    double t_prev = 0.0;
    for (Index i = 0; i < opt.n_obs; ++i) {
      const double ti = times[static_cast<std::size_t>(i)];
      integrate(t_prev, ti, opt.step, [&](double, double h) {
        const double xv = x_alive ? std::exp(lx) : 0.0;
        const double yv = y_alive ? std::exp(ly) : 0.0;
        const double sh = std::sqrt(h);
        const double w1 = rng.normal();
        const double w2 = rng.normal();
        if (x_alive) lx += (p.alpha + p.beta * yv - ito) * h + p.sigma * sh * w1;
        if (y_alive) ly += (p.delta * xv + p.gamma - ito) * h + p.sigma * sh * w2;
      });
      t_prev = ti;
      lat(i, 0) = x_alive ? std::exp(lx) : 0.0;
      lat(i, 1) = y_alive ? std::exp(ly) : 0.0;
      for (int k = 0; k < 2; ++k) {
        x.values(i, k) = lat(i, k) + (obs_std > 0.0 ? obs_std * obs_rng.normal() : 0.0);
      }
    }
    data.series.push_back(std::move(x));
    data.latents.push_back(std::move(lat));
  }
  data.metadata = base_metadata("lotka-volterra", opt, 2);
  data.metadata["alpha"] = p.alpha;
  data.metadata["beta"] = p.beta;
  data.metadata["delta"] = p.delta;
  data.metadata["gamma"] = p.gamma;
  data.metadata["sigma"] = p.sigma;
  data.metadata["x0"] = p.x0;
  data.metadata["y0"] = p.y0;
  data.metadata["obs_var"] = p.obs_var;
  return data;
}

// ---- file format ----------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("dataset line " + std::to_string(line) + ": bad number '" +
                                std::string(s) + "'");
  }
  return v;
}

}  // namespace

void write_dataset(const Dataset& data, std::ostream& out) {
  if (data.series.empty()) throw std::invalid_argument("dataset has no series");
  const Index dx = data.series.front().dim();
  nlohmann::ordered_json meta = data.metadata;
  nlohmann::ordered_json cols = nlohmann::ordered_json::array({"series_id", "t"});
  for (Index k = 0; k < dx; ++k) cols.push_back("x_" + std::to_string(k + 1));
  meta["columns"] = cols;
  meta["horizon"] = data.series.front().horizon;
  meta["n_series"] = data.series.size();
  meta["obs_dim"] = dx;
  out << meta.dump() << '\n';
  for (std::size_t s = 0; s < data.series.size(); ++s) {
    const TimeSeries& x = data.series[s];
    if (x.dim() != dx) throw ShapeError("all series must share the observation dimension");
    for (Index i = 0; i < x.size(); ++i) {
      out << s << ',' << format_double(x.times[static_cast<std::size_t>(i)]);
      for (Index k = 0; k < dx; ++k) out << ',' << format_double(x.values(i, k));
      out << '\n';
    }
  }
}

void write_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_dataset(data, out);
  if (!out) throw std::runtime_error("failed writing " + path);
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("dataset is empty");
  Dataset data;
  try {
    data.metadata = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("dataset header is not valid JSON: ") + e.what());
  }
  Index dx = 0;
  double horizon = 0.0;
  try {
    dx = data.metadata.at("obs_dim").get<Index>();
    horizon = data.metadata.at("horizon").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("dataset header lacks obs_dim/horizon: ") + e.what());
  }
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<std::vector<double>>>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto pos = rest.find(',');
      fields.push_back(rest.substr(0, pos));
      if (pos == std::string_view::npos) break;
      rest.remove_prefix(pos + 1);
    }
    if (static_cast<Index>(fields.size()) != dx + 2) {
      throw std::invalid_argument("dataset line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(dx + 2) + " fields, got " +
                                  std::to_string(fields.size()));
    }
    std::size_t id = 0;
    const auto res = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), id);
    if (res.ec != std::errc()) {
      throw std::invalid_argument("dataset line " + std::to_string(lineno) + ": bad series id");
    }
    auto& entry = rows[id];
    entry.first.push_back(parse_double(fields[1], lineno));
    std::vector<double> v;
    for (Index k = 0; k < dx; ++k) v.push_back(parse_double(fields[static_cast<std::size_t>(k) + 2], lineno));
    entry.second.push_back(std::move(v));
  }
  for (auto& [id, entry] : rows) {
    TimeSeries x;
    x.times = entry.first;
    x.horizon = horizon;
    x.values.resize(static_cast<Index>(entry.second.size()), dx);
    for (std::size_t i = 0; i < entry.second.size(); ++i) {
      for (Index k = 0; k < dx; ++k) x.values(static_cast<Index>(i), k) = entry.second[i][static_cast<std::size_t>(k)];
    }
    x.validate();
    data.series.push_back(std::move(x));
  }
  if (data.series.empty()) throw std::invalid_argument("dataset has no rows");
  return data;
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_dataset(in);
}

// ---- standardization ------------------------------------------------------

Standardizer Standardizer::fit(const std::vector<TimeSeries>& series) {
  if (series.empty()) throw std::invalid_argument("cannot standardize an empty dataset");
  const Index dx = series.front().dim();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(dx);
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(dx);
  double n = 0.0;
  for (const auto& x : series) {
    sum += x.values.colwise().sum();
    sq += x.values.array().square().matrix().colwise().sum();
    n += static_cast<double>(x.size());
  }
  Standardizer s;
  s.mean = sum / n;
  s.scale = (sq / n - s.mean.array().square().matrix()).cwiseMax(1e-12).cwiseSqrt();
  return s;
}

TimeSeries Standardizer::apply(const TimeSeries& x) const {
  TimeSeries out = x;
  out.values = ((x.values.rowwise() - mean).array().rowwise() / scale.array()).matrix();
  return out;
}

Matrix Standardizer::invert(const Matrix& values) const {
  return ((values.array().rowwise() * scale.array()).rowwise() + mean.array()).matrix();
}

}  // namespace sdematch
