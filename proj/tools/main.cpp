#include "config.hpp"

#include "sdematch/baseline.hpp"
#include "sdematch/checkpoint.hpp"
#include "sdematch/data.hpp"
#include "sdematch/matching.hpp"
#include "sdematch/oracle.hpp"
#include "sdematch/simulate.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

namespace sdematch::cli {
namespace {

namespace fs = std::filesystem;

// ---- plumbing --------------------------------------------------------------

struct Options {
  std::string config_file;
  std::vector<std::string> overrides;
  std::map<std::string, std::string> flags;
  std::string data;
  std::string checkpoint;
  long series = -1;
};

void add_config_options(CLI::App* cmd, Options& opt) {
  cmd->add_option("--config", opt.config_file, "key = value config file");
  cmd->add_option("--set", opt.overrides, "override a config key (key=value); repeatable");
  for (const std::string& key : RunConfig::keys()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    cmd->add_option("--" + flag, opt.flags[key]);
  }
}

RunConfig resolve(RunConfig base, const Options& opt, const CLI::App* cmd) {
  if (!opt.config_file.empty()) load_config_file(base, opt.config_file);
  for (const auto& o : opt.overrides) apply_override(base, o);
  for (const std::string& key : RunConfig::keys()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (cmd->count("--" + flag) > 0) base.set(key, opt.flags.at(key));
  }
  base.validate();
  return base;
}

fs::path prepare_out_dir(const RunConfig& cfg, const std::string& command) {
  const fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_config(cfg, (dir / (command + ".config")).string());
  return dir;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

Dataset load_dataset(const std::string& path) {
  if (path.empty()) throw ConfigError("--data is required");
  try {
    return read_dataset(path);
  } catch (const std::invalid_argument& e) {
    throw IoError(path + ": " + e.what());
  }
}

double dataset_obs_var(const Dataset& d) {
  if (!d.metadata.contains("obs_var")) throw ConfigError("dataset metadata lacks obs_var");
  return d.metadata["obs_var"].get<double>();
}

ContextMode context_mode(const std::string& s) {
  if (s == "piecewise") return ContextMode::kPiecewise;
  if (s == "global") return ContextMode::kGlobal;
  return ContextMode::kInterpolated;
}

// ---- models and checkpoints ------------------------------------------------

struct Models {
  RunConfig cfg;
  Index obs_dim = 0;
  double linear_obs_var = 0.01;
  std::unique_ptr<PriorModel> prior;
  std::unique_ptr<NeuralPosterior> posterior;
  std::unique_ptr<ConventionalPosterior> conventional;
  std::optional<Standardizer> standardizer;

  std::vector<TimeSeries> prepare(const std::vector<TimeSeries>& raw) const {
    for (const TimeSeries& x : raw) {
      if (x.dim() != obs_dim) {
        throw ConfigError("dataset has observation dimension " + std::to_string(x.dim()) +
                          " but the model expects " + std::to_string(obs_dim));
      }
    }
    if (!standardizer) return raw;
    std::vector<TimeSeries> out;
    for (const TimeSeries& x : raw) out.push_back(standardizer->apply(x));
    return out;
  }
  Matrix to_data_units(const Matrix& v) const { return standardizer ? standardizer->invert(v) : v; }
  ParameterSet& posterior_params() {
    return posterior ? posterior->params() : conventional->params();
  }
};

Models build_models(const RunConfig& cfg, Index obs_dim, double linear_obs_var) {
  Models m;
  m.cfg = cfg;
  m.obs_dim = obs_dim;
  m.linear_obs_var = linear_obs_var;
  const Index d = cfg.resolved_latent_dim();
  if (cfg.prior == "true") {
    if (d != 1 || obs_dim != 1) throw ConfigError("prior=true needs latent_dim = obs_dim = 1");
    m.prior = std::make_unique<LinearPrior>(LinearSystemSpec::time_varying_scalar(linear_obs_var), cfg.g_min);
  } else {
    PriorConfig pc;
    pc.latent_dim = d;
    pc.obs_dim = obs_dim;
    pc.hidden = cfg.hidden;
    pc.depth = cfg.depth;
    pc.state_dependent_diffusion = cfg.state_dependent_diffusion;
    pc.g_min = cfg.g_min;
    pc.obs_std_init = cfg.obs_std_init;
    pc.train_obs_std = cfg.train_obs_std;
    m.prior = std::make_unique<NeuralPrior>(pc, cfg.model_seed);
  }
  PosteriorConfig qc;
  qc.latent_dim = d;
  qc.obs_dim = obs_dim;
  qc.hidden = cfg.hidden;
  qc.depth = cfg.depth;
  qc.context = cfg.context;
  qc.mode = context_mode(cfg.context_mode);
  if (cfg.method == "matching") {
    m.posterior = std::make_unique<NeuralPosterior>(qc, cfg.model_seed);
  } else {
    m.conventional = std::make_unique<ConventionalPosterior>(qc, cfg.model_seed);
  }
  return m;
}

void save_models(Models& m, const fs::path& path) {
  nlohmann::ordered_json meta;
  meta["kind"] = "sdematch";
  meta["config"] = m.cfg.entries();
  meta["obs_dim"] = m.obs_dim;
  meta["linear_obs_var"] = m.linear_obs_var;
  if (m.standardizer) {
    meta["standardizer"]["mean"] = std::vector<double>(m.standardizer->mean.begin(), m.standardizer->mean.end());
    meta["standardizer"]["scale"] = std::vector<double>(m.standardizer->scale.begin(), m.standardizer->scale.end());
  }
  const Checkpoint c = make_checkpoint(meta, {&m.prior->params(), &m.posterior_params()});
  std::ofstream out = open_output(path);
  write_checkpoint(c, out);
  if (!out) throw IoError("error writing " + path.string());
}

Models load_models(const std::string& path, const Options& opt, const CLI::App* cmd) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  Checkpoint c;
  try {
    c = read_checkpoint(path);
  } catch (const std::invalid_argument& e) {
    throw IoError(path + ": " + e.what());
  }
  if (c.metadata.value("kind", "") != "sdematch") throw IoError(path + ": not an sdematch checkpoint");
  RunConfig base;
  for (const auto& [k, v] : c.metadata["config"].items()) base.set(k, v.get<std::string>());
  const RunConfig cfg = resolve(base, opt, cmd);
  Models m = build_models(cfg, c.metadata["obs_dim"].get<Index>(), c.metadata["linear_obs_var"].get<double>());
  if (c.metadata.contains("standardizer")) {
    const auto mean = c.metadata["standardizer"]["mean"].get<std::vector<double>>();
    const auto scale = c.metadata["standardizer"]["scale"].get<std::vector<double>>();
    Standardizer s;
    s.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Index>(mean.size()));
    s.scale = Eigen::Map<const Eigen::RowVectorXd>(scale.data(), static_cast<Index>(scale.size()));
    m.standardizer = s;
  }
  restore(c, m.prior->params());
  restore(c, m.posterior_params());
  return m;
}

// ---- commands --------------------------------------------------------------

int cmd_generate_data(const RunConfig& cfg) {
  const fs::path dir = prepare_out_dir(cfg, "generate-data");
  SimulationOptions so;
  so.n_obs = cfg.n_obs;
  so.n_series = cfg.n_series;
  so.horizon = cfg.horizon;
  so.seed = cfg.seed;
  so.step = cfg.sim_step;
  Dataset d;
  if (cfg.system == "linear") {
    d = gen_linear(LinearSystemSpec::time_varying_scalar(cfg.obs_var >= 0.0 ? cfg.obs_var : 0.01), so);
  } else if (cfg.system == "lorenz") {
    LorenzParams p;
    if (cfg.obs_var >= 0.0) p.obs_var = cfg.obs_var;
    d = gen_lorenz(p, so);
  } else {
    LotkaVolterraParams p;
    if (cfg.obs_var >= 0.0) p.obs_var = cfg.obs_var;
    d = gen_lotka_volterra(p, so);
  }
  const fs::path path = dir / "data.csv";
  std::ofstream out = open_output(path);
  write_dataset(d, out);
  if (!out) throw IoError("error writing " + path.string());
  std::cout << "wrote " << d.size() << " series x " << cfg.n_obs << " observations (d_x = "
            << d.series.front().dim() << ", system " << cfg.system << ") to " << path.string() << '\n';
  return 0;
}

int cmd_train(const Options& opt, const CLI::App* cmd) {
  const Dataset data = load_dataset(opt.data);
  const RunConfig cfg = resolve(RunConfig{}, opt, cmd);
  const fs::path dir = prepare_out_dir(cfg, "train");
  const double obs_var = data.metadata.contains("obs_var") ? dataset_obs_var(data) : 0.01;
  Models m = build_models(cfg, data.series.front().dim(), obs_var);
  if (cfg.standardize) m.standardizer = Standardizer::fit(data.series);
  const std::vector<TimeSeries> series = m.prepare(data.series);

  std::ofstream metrics_file = open_output(dir / "metrics.csv");
  std::optional<MetricsWriter> metrics;
  if (cfg.method == "baseline") {
    metrics.emplace(metrics_file, std::vector<std::string>{"L", "tape_nodes"});
  } else {
    metrics.emplace(metrics_file);
  }
  TrainSummary s;
  int status = 0;
  try {
    if (cfg.method == "matching") {
      TrainConfig tc;
      tc.iterations = cfg.iterations;
      tc.adam.lr = cfg.lr;
      tc.seed = cfg.seed;
      tc.batch_size = cfg.batch_size;
      tc.step.train_prior = cfg.train_prior && cfg.prior == "neural";
      tc.step.loss.diff_samples = cfg.diff_samples;
      tc.step.loss.rec_samples = cfg.rec_samples;
      s = train_matching(*m.prior, *m.posterior, series, tc, &*metrics);
    } else {
      BaselineTrainConfig bc;
      bc.iterations = cfg.iterations;
      bc.adam.lr = cfg.lr;
      bc.seed = cfg.seed;
      bc.batch_size = cfg.batch_size;
      bc.step.steps = cfg.steps;
      bc.step.train_prior = cfg.train_prior && cfg.prior == "neural";
      s = train_baseline(*m.prior, *m.conventional, series, bc, &*metrics);
    }
    if (cfg.iterations > 0 && !std::isfinite(s.last.total)) {
      std::cerr << "error: final loss is not finite\n";
      status = 3;
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "; writing the last good checkpoint\n";
    status = 3;
  }
  save_models(m, dir / "checkpoint.txt");
  std::cout << "trained " << cfg.method << " for " << s.steps << " steps (" << s.skipped
            << " skipped) in " << s.wall_ms / 1000.0 << " s; last loss " << s.last.total << "\n"
            << "wrote " << (dir / "metrics.csv").string() << " and "
            << (dir / "checkpoint.txt").string() << '\n';
  return status;
}

// Condition on all but the last `holdout` observations, predict the held-out
// observations by the mean decoded forecast, and compare with repeating the
// last conditioning observation. Errors are in data units.
std::pair<double, double> forecast_errors(const Models& m, const TimeSeries& x, std::uint64_t seed) {
  const Index seen = x.size() - m.cfg.forecast_holdout;
  if (seen < 1) return {std::nan(""), std::nan("")};
  TimeSeries past;
  past.horizon = x.horizon;
  past.times.assign(x.times.begin(), x.times.begin() + seen);
  past.values = x.values.topRows(seen);
  std::vector<double> horizon{past.times.back()};
  horizon.insert(horizon.end(), x.times.begin() + seen, x.times.end());
  ForecastOptions fo;
  fo.paths = m.cfg.paths;
  fo.max_step = m.cfg.max_step;
  fo.seed = seed;
  const TrajectoryBatch f = forecast(*m.prior, *m.posterior, past, horizon, fo);
  const auto p = m.prior->bind(Binding(m.prior->params(), nullptr));
  double model = 0.0, last = 0.0;
  const Eigen::RowVectorXd held = m.to_data_units(past.values.bottomRows(1));
  for (Index i = seen; i < x.size(); ++i) {
    const Matrix decoded = p->obs_mean(Var(f.states[static_cast<std::size_t>(i - seen + 1)])).value();
    const Eigen::RowVectorXd pred = m.to_data_units(Matrix(decoded.colwise().mean()));
    const Eigen::RowVectorXd target = m.to_data_units(Matrix(x.values.row(i)));
    model += (pred - target).squaredNorm();
    last += (held - target).squaredNorm();
  }
  const auto n = static_cast<double>(x.size() - seen);
  return {model / n, last / n};
}

int cmd_evaluate(const Options& opt, const CLI::App* cmd) {
  const Models m = load_models(opt.checkpoint, opt, cmd);
  const Dataset data = load_dataset(opt.data);
  const std::vector<TimeSeries> series = m.prepare(data.series);
  const fs::path dir = prepare_out_dir(m.cfg, "evaluate");
  std::ofstream out = open_output(dir / "report.csv");
  out << "series,n_obs,nelbo,std_error,nelbo_per_obs,forecast_mse,last_value_mse\n";
  double total = 0.0, total_se2 = 0.0, fm = 0.0, fl = 0.0;
  long forecasts = 0;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const TimeSeries& x = series[s];
    const std::uint64_t seed = m.cfg.seed + s;
    const Estimate e = m.posterior
                           ? estimate_nelbo(*m.prior, *m.posterior, x, m.cfg.samples, seed)
                           : estimate_path_nelbo(*m.prior, *m.conventional, x, m.cfg.steps,
                                                 m.cfg.samples, seed);
    // Forecasting starts from the posterior marginals; the baseline posterior
    // has none.
    const auto [model_mse, last_mse] =
        m.posterior ? forecast_errors(m, x, seed) : std::pair{std::nan(""), std::nan("")};
    out << s << ',' << x.size() << ',' << format_double(e.mean) << ',' << format_double(e.std_error)
        << ',' << format_double(e.mean / static_cast<double>(x.size())) << ','
        << format_double(model_mse) << ',' << format_double(last_mse) << '\n';
    total += e.mean;
    total_se2 += e.std_error * e.std_error;
    if (std::isfinite(model_mse)) {
      fm += model_mse;
      fl += last_mse;
      ++forecasts;
    }
  }
  const auto n = static_cast<double>(series.size());
  std::cout << "mean NELBO " << total / n << " +- " << std::sqrt(total_se2) / n << " over "
            << series.size() << " series";
  if (forecasts > 0) {
    std::cout << "; forecast MSE " << fm / static_cast<double>(forecasts) << " vs last value "
              << fl / static_cast<double>(forecasts);
  }
  std::cout << "\nwrote " << (dir / "report.csv").string() << '\n';
  return 0;
}

int cmd_sample(const Options& opt, const CLI::App* cmd) {
  const Models m = load_models(opt.checkpoint, opt, cmd);
  const fs::path dir = prepare_out_dir(m.cfg, "sample");
  PriorSample s = sample_prior(*m.prior, uniform_grid(0.0, m.cfg.horizon, m.cfg.sample_steps),
                               m.cfg.paths, m.cfg.seed);
  for (Matrix& o : s.observations) o = m.to_data_units(o);
  std::ofstream out = open_output(dir / "samples.csv");
  write_trajectories(out, s.latent, &s.observations);
  std::cout << "wrote " << m.cfg.paths << " prior paths to " << (dir / "samples.csv").string() << '\n';
  return 0;
}

int cmd_forecast(const Options& opt, const CLI::App* cmd) {
  const Models m = load_models(opt.checkpoint, opt, cmd);
  if (!m.posterior) throw ConfigError("forecast needs a checkpoint trained with method=matching");
  const Dataset data = load_dataset(opt.data);
  const std::vector<TimeSeries> series = m.prepare(data.series);
  const long index = opt.series < 0 ? 0 : opt.series;
  if (index >= static_cast<long>(series.size())) {
    throw ConfigError("--series " + std::to_string(index) + " out of range (dataset has " +
                      std::to_string(series.size()) + ")");
  }
  const TimeSeries& x = series[static_cast<std::size_t>(index)];
  const fs::path dir = prepare_out_dir(m.cfg, "forecast");
  ForecastOptions fo;
  fo.paths = m.cfg.paths;
  fo.max_step = m.cfg.max_step;
  fo.seed = m.cfg.seed;
  const double t0 = x.times.back();
  const TrajectoryBatch f = forecast(*m.prior, *m.posterior, x, uniform_grid(t0, t0 + m.cfg.forecast_span, 10), fo);
  const auto p = m.prior->bind(Binding(m.prior->params(), nullptr));
  std::vector<Matrix> decoded;
  for (const Matrix& z : f.states) decoded.push_back(m.to_data_units(p->obs_mean(Var(z)).value()));
  std::ofstream out = open_output(dir / "forecast.csv");
  write_trajectories(out, f, &decoded);
  std::cout << "wrote " << fo.paths << " forecast paths on [" << t0 << ", " << t0 + m.cfg.forecast_span
            << "] to " << (dir / "forecast.csv").string() << '\n';
  return 0;
}

int cmd_compare(const Options& opt, const CLI::App* cmd) {
  const RunConfig cfg = resolve(RunConfig{}, opt, cmd);
  if (cfg.system != "linear") throw ConfigError("compare runs on system=linear");
  const fs::path dir = prepare_out_dir(cfg, "compare");
  const LinearSystemSpec spec = LinearSystemSpec::time_varying_scalar(cfg.obs_var >= 0.0 ? cfg.obs_var : 0.01);
  std::ofstream out = open_output(dir / "compare.csv");
  out << "method,T_or_L,mean_log10_gradnorm,std,wall_ms,tape_nodes\n";
  auto row = [&](const std::string& method, const std::string& key, double mean, double sd,
                 double ms, double nodes) {
    out << method << ',' << key << ',' << format_double(mean) << ',' << format_double(sd) << ','
        << format_double(ms) << ',' << format_double(nodes) << '\n';
    std::cout << method << ' ' << key << ": log10|grad| " << mean << " +- " << sd << ", " << ms
              << " ms, " << nodes << " tape nodes\n";
  };

  HorizonStudy study;
  study.horizons = parse_list(cfg.horizons, "horizons");
  study.noise_seeds = cfg.noise_seeds;
  study.n_obs = cfg.n_obs;
  study.steps_per_unit_time = static_cast<double>(cfg.steps);
  study.model_seed = cfg.model_seed;
  study.data_seed = cfg.seed;
  study.hidden = cfg.hidden;
  study.context = cfg.context;
  for (Method method : {Method::kMatching, Method::kBaseline}) {
    for (const HorizonRow& r : grad_norm_vs_horizon(spec, method, study)) {
      row(method_name(method), "T=" + format_double(r.horizon), r.mean_log10, r.std_log10, r.wall_ms,
          r.tape_nodes);
    }
  }

  // Cost per gradient evaluation against the baseline step count L on [0, 1].
  SimulationOptions so;
  so.n_obs = cfg.n_obs;
  so.seed = cfg.seed;
  const std::vector<TimeSeries> batch = gen_linear(spec, so).series;
  PriorConfig pc;
  pc.hidden = cfg.hidden;
  PosteriorConfig qc;
  qc.hidden = cfg.hidden;
  qc.context = cfg.context;
  const NeuralPrior prior(pc, cfg.model_seed);
  const NeuralPosterior post(qc, cfg.model_seed);
  const ConventionalPosterior conventional(qc, cfg.model_seed);
  for (double l : parse_list(cfg.compare_steps, "compare_steps")) {
    for (Method method : {Method::kMatching, Method::kBaseline}) {
      std::vector<double> logs;
      double ms = 0.0, nodes = 0.0;
      for (long rep = 0; rep < cfg.timing_reps; ++rep) {
        Rng rng(cfg.seed, static_cast<std::uint64_t>(rep));
        BaselineOptions bo;
        bo.steps = static_cast<Index>(l);
        const GradientResult g = method == Method::kMatching
                                     ? matching_gradients(prior, post, batch, rng)
                                     : baseline_gradients(prior, conventional, batch, rng, bo);
        if (!g.step.applied) throw NumericalError("compare: non-finite gradient (" + g.step.failure + ")");
        logs.push_back(std::log10(g.step.grad_norm));
        ms += g.step.wall_ms;
        nodes = static_cast<double>(g.step.tape_nodes);
      }
      const Eigen::Map<const Eigen::VectorXd> v(logs.data(), static_cast<Index>(logs.size()));
      const double mean = v.mean();
      const double sd = logs.size() > 1 ? std::sqrt((v.array() - mean).square().sum() /
                                                    static_cast<double>(logs.size() - 1))
                                        : 0.0;
      row(method_name(method), "L=" + format_double(l), mean, sd, ms / static_cast<double>(cfg.timing_reps),
          nodes);
    }
  }
  std::cout << "wrote " << (dir / "compare.csv").string() << '\n';
  return 0;
}

int cmd_kalman_check(const Options& opt, const CLI::App* cmd) {
  const Dataset data = load_dataset(opt.data);
  if (data.metadata.value("generator", "") != "linear") {
    throw ConfigError("kalman-check needs a dataset from system=linear");
  }
  const LinearSystemSpec spec = LinearSystemSpec::time_varying_scalar(dataset_obs_var(data));
  std::optional<Models> m;
  RunConfig cfg;
  if (!opt.checkpoint.empty()) {
    m.emplace(load_models(opt.checkpoint, opt, cmd));
    cfg = m->cfg;
  } else {
    cfg = resolve(RunConfig{}, opt, cmd);
  }
  const fs::path dir = prepare_out_dir(cfg, "kalman-check");
  std::ofstream out = open_output(dir / "kalman.csv");
  out << "series,n_obs,loglik" << (m ? ",nelbo,std_error,gap_per_obs" : "") << '\n';
  const std::vector<TimeSeries> prepared = m ? m->prepare(data.series) : data.series;
  if (m && m->standardizer) throw ConfigError("kalman-check needs a checkpoint trained without standardize");
  for (std::size_t s = 0; s < data.size(); ++s) {
    const TimeSeries& x = data.series[s];
    const double ll = kalman_loglik(spec, x);
    out << s << ',' << x.size() << ',' << format_double(ll);
    std::cout << "series " << s << ": log p(X) = " << ll;
    if (m) {
      const Estimate e =
          m->posterior ? estimate_nelbo(*m->prior, *m->posterior, prepared[s], cfg.samples, cfg.seed + s)
                       : estimate_path_nelbo(*m->prior, *m->conventional, prepared[s], cfg.steps,
                                             cfg.samples, cfg.seed + s);
      const double gap = (e.mean + ll) / static_cast<double>(x.size());
      out << ',' << format_double(e.mean) << ',' << format_double(e.std_error) << ','
          << format_double(gap);
      std::cout << ", NELBO " << e.mean << " +- " << e.std_error << ", gap " << gap << " nats/obs";
    }
    out << '\n';
    std::cout << '\n';
  }
  std::cout << "wrote " << (dir / "kalman.csv").string() << '\n';
  return 0;
}

}  // namespace
}  // namespace sdematch::cli

int main(int argc, char** argv) {
  using namespace sdematch;
  using namespace sdematch::cli;
  CLI::App app{"Simulation-free training of latent SDEs"};
  app.require_subcommand(1);
  Options opt;
  auto* gen = app.add_subcommand("generate-data", "simulate a dataset");
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  auto* evaluate = app.add_subcommand("evaluate", "NELBO and forecast report for a checkpoint");
  auto* sample = app.add_subcommand("sample", "unconditional samples from a trained prior");
  auto* fc = app.add_subcommand("forecast", "forecast a series beyond its last observation");
  auto* compare = app.add_subcommand("compare", "gradient norms and cost versus the baseline");
  auto* kalman = app.add_subcommand("kalman-check", "exact log-likelihood of linear-system data");
  for (auto* cmd : {gen, train, evaluate, sample, fc, compare, kalman}) add_config_options(cmd, opt);
  for (auto* cmd : {train, evaluate, fc, kalman}) cmd->add_option("--data", opt.data, "dataset file");
  for (auto* cmd : {evaluate, sample, fc, kalman}) {
    cmd->add_option("--checkpoint", opt.checkpoint, "checkpoint file");
  }
  fc->add_option("--series", opt.series, "series index (default 0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 4;
  }
  try {
    if (gen->parsed()) return cmd_generate_data(resolve(RunConfig{}, opt, gen));
    if (train->parsed()) return cmd_train(opt, train);
    if (evaluate->parsed()) return cmd_evaluate(opt, evaluate);
    if (sample->parsed()) return cmd_sample(opt, sample);
    if (fc->parsed()) return cmd_forecast(opt, fc);
    if (compare->parsed()) return cmd_compare(opt, compare);
    return cmd_kalman_check(opt, kalman);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
