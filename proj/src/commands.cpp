#include "wishflow/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "wishflow/checkpoint.hpp"

namespace wishflow::cli {

using ad::Matrix;

namespace {

long parse_long(const std::string &key, const std::string &value) {
  try {
    std::size_t pos = 0;
    long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception &) {
    throw ParseError("config key '" + key + "': expected an integer, got '" + value + "'");
  }
}

double parse_double(const std::string &key, const std::string &value) {
  try {
    std::size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception &) {
    throw ParseError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string &key, const std::string &value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ParseError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string &value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string trim(const std::string &s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::string> &items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

} // namespace

void RunConfig::set(const std::string &key, const std::string &value) {
  if (key == "dataset") dataset = value;
  else if (key == "targets") targets = split_list(value);
  else if (key == "time_column") time_column = value;
  else if (key == "split.fraction") split_fraction = parse_double(key, value);
  else if (key == "window") window = parse_long(key, value);
  else if (key == "variant") variant = value;
  else if (key == "rho") rho = parse_long(key, value);
  else if (key == "nu") nu = parse_long(key, value);
  else if (key == "lambda") lambda = parse_bool(key, value);
  else if (key == "model.inducing") inducing = parse_long(key, value);
  else if (key == "model.g_inducing") g_inducing = parse_long(key, value);
  else if (key == "flow.steps") flow_steps = parse_long(key, value);
  else if (key == "flow.mc_samples") mc_samples = parse_long(key, value);
  else if (key == "flow.horizon") flow_horizon = parse_double(key, value);
  else if (key == "dynamics.max_step") max_step = parse_double(key, value);
  else if (key == "dynamics.mc_paths") mc_paths = parse_long(key, value);
  else if (key == "train.phase1_iters") schedule.phase1_iters = parse_long(key, value);
  else if (key == "train.total_iters") schedule.total_iters = parse_long(key, value);
  else if (key == "train.phase1_lr") schedule.phase1_lr = parse_double(key, value);
  else if (key == "train.phase2_lr") schedule.phase2_lr = parse_double(key, value);
  else if (key == "train.anneal_iters") schedule.anneal_iters = parse_long(key, value);
  else if (key == "train.batch_size") schedule.batch_size = parse_long(key, value);
  else if (key == "train.beta1") schedule.beta1 = parse_double(key, value);
  else if (key == "train.train_inducing") schedule.train_inducing = parse_bool(key, value);
  else if (key == "train.clip_norm") schedule.clip_norm = parse_double(key, value);
  else if (key == "train.log_every") schedule.log_every = parse_long(key, value);
  else if (key == "eval.samples") eval_samples = parse_long(key, value);
  else if (key == "forecast.horizon") forecast_horizon = parse_double(key, value);
  else if (key == "forecast.n_sims") n_sims = parse_long(key, value);
  else if (key == "forecast.pairs") {
    density_pairs.clear();
    for (const std::string &p : split_list(value)) {
      std::size_t colon = p.find(':');
      if (colon == std::string::npos)
        throw ParseError("config key 'forecast.pairs': expected i:j entries, got '" + p + "'");
      density_pairs.emplace_back(parse_long(key, p.substr(0, colon)),
                                 parse_long(key, p.substr(colon + 1)));
    }
  } else if (key == "ablate.variants") ablate_variants = split_list(value);
  else if (key == "ablate.seeds") {
    ablate_seeds.clear();
    for (const std::string &s : split_list(value))
      ablate_seeds.push_back(static_cast<std::uint64_t>(parse_long(key, s)));
  } else if (key == "seed") {
    seed = static_cast<std::uint64_t>(parse_long(key, value));
    seed_set = true;
  } else if (key == "out") out = value;
  else throw ParseError("unknown config key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file " + path);
  RunConfig rc;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + " line " + std::to_string(lineno) + ": expected key = value");
    rc.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return rc;
}

void RunConfig::validate() const {
  if (dataset.empty()) throw ParseError("config: 'dataset' is required");
  if (!std::filesystem::exists(dataset))
    throw ParseError("config: dataset file does not exist: " + dataset);
  if (!seed_set) throw ParseError("config: 'seed' is required");
  if (out.empty()) throw ParseError("config: 'out' is required");
  if (targets.empty() && time_column.empty())
    throw ParseError("config: set either 'targets' (regression) or 'time_column' (dynamics)");
  if (!targets.empty() && !time_column.empty())
    throw ParseError("config: 'targets' and 'time_column' are mutually exclusive");
  try {
    models::variant_from_name(variant);
  } catch (const DimensionError &e) {
    throw ParseError(std::string("config key 'variant': ") + e.what());
  }
  if (rho < 1) throw ParseError("config key 'rho': must be positive");
  if (nu < 0) throw ParseError("config key 'nu': must be non-negative");
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw ParseError("config key 'split.fraction': must be in (0, 1)");
  if (inducing < 1 || g_inducing < 1)
    throw ParseError("config key 'model.inducing': must be positive");
  if (flow_steps < 1 || mc_samples < 1)
    throw ParseError("config key 'flow.steps'/'flow.mc_samples': must be positive");
  if (window < 2) throw ParseError("config key 'window': must be at least 2");
  if (eval_samples < 1) throw ParseError("config key 'eval.samples': must be positive");
  if (n_sims < 1) throw ParseError("config key 'forecast.n_sims': must be positive");
  try {
    schedule.validate();
  } catch (const DimensionError &e) {
    throw ParseError(std::string("config: train schedule: ") + e.what());
  }
}

std::string RunConfig::serialize() const {
  std::ostringstream s;
  s << "dataset = " << dataset << "\n";
  if (!targets.empty()) s << "targets = " << join(targets) << "\n";
  if (!time_column.empty()) s << "time_column = " << time_column << "\n";
  s << "split.fraction = " << fmt(split_fraction) << "\n";
  s << "window = " << window << "\n";
  s << "variant = " << variant << "\n";
  s << "rho = " << rho << "\n";
  s << "nu = " << nu << "\n";
  s << "lambda = " << (lambda ? "true" : "false") << "\n";
  s << "model.inducing = " << inducing << "\n";
  s << "model.g_inducing = " << g_inducing << "\n";
  s << "flow.steps = " << flow_steps << "\n";
  s << "flow.mc_samples = " << mc_samples << "\n";
  s << "flow.horizon = " << fmt(flow_horizon) << "\n";
  s << "dynamics.max_step = " << fmt(max_step) << "\n";
  s << "dynamics.mc_paths = " << mc_paths << "\n";
  s << "train.phase1_iters = " << schedule.phase1_iters << "\n";
  s << "train.total_iters = " << schedule.total_iters << "\n";
  s << "train.phase1_lr = " << fmt(schedule.phase1_lr) << "\n";
  s << "train.phase2_lr = " << fmt(schedule.phase2_lr) << "\n";
  s << "train.anneal_iters = " << schedule.anneal_iters << "\n";
  s << "train.batch_size = " << schedule.batch_size << "\n";
  s << "train.beta1 = " << fmt(schedule.beta1) << "\n";
  s << "train.train_inducing = " << (schedule.train_inducing ? "true" : "false") << "\n";
  s << "train.clip_norm = " << fmt(schedule.clip_norm) << "\n";
  s << "train.log_every = " << schedule.log_every << "\n";
  s << "eval.samples = " << eval_samples << "\n";
  s << "forecast.horizon = " << fmt(forecast_horizon) << "\n";
  s << "forecast.n_sims = " << n_sims << "\n";
  if (!density_pairs.empty()) {
    s << "forecast.pairs = ";
    for (std::size_t i = 0; i < density_pairs.size(); ++i)
      s << (i ? "," : "") << density_pairs[i].first << ":" << density_pairs[i].second;
    s << "\n";
  }
  if (!ablate_variants.empty()) s << "ablate.variants = " << join(ablate_variants) << "\n";
  if (!ablate_seeds.empty()) {
    s << "ablate.seeds = ";
    for (std::size_t i = 0; i < ablate_seeds.size(); ++i)
      s << (i ? "," : "") << ablate_seeds[i];
    s << "\n";
  }
  s << "seed = " << seed << "\n";
  s << "out = " << out << "\n";
  return s.str();
}

std::string RunConfig::hash_comment() const {
  std::ostringstream s;
  s << "# config_hash " << std::hex << train::fnv1a64(serialize()) << "\n";
  return s.str();
}

namespace {

struct RegressionSetup {
  models::RegressionConfig cfg;
  Matrix Xtr, ytr, Xte, yte; // standardized
  Matrix ytr_raw, yte_raw;   // kept target columns, original units
  data::Standardizer xs, ys;
};

RegressionSetup regression_setup(const RunConfig &rc) {
  data::TabularDataset ds = data::load_tabular_csv(rc.dataset, rc.targets);
  auto [tr, te] = data::split(ds, rc.split_fraction, rc.seed);

  RegressionSetup s;
  s.xs = data::Standardizer::fit(tr.X);
  s.ys = data::Standardizer::fit(tr.y);
  s.Xtr = s.xs.apply(tr.X);
  s.ytr = s.ys.apply(tr.y);
  s.Xte = s.xs.apply(te.X);
  s.yte = s.ys.apply(te.y);
  s.ytr_raw.resize(tr.y.rows(), static_cast<long>(s.ys.kept.size()));
  s.yte_raw.resize(te.y.rows(), static_cast<long>(s.ys.kept.size()));
  for (std::size_t j = 0; j < s.ys.kept.size(); ++j) {
    s.ytr_raw.col(static_cast<long>(j)) = tr.y.col(s.ys.kept[j]);
    s.yte_raw.col(static_cast<long>(j)) = te.y.col(s.ys.kept[j]);
  }

  long m = std::min(rc.inducing, s.Xtr.rows());
  long gm = std::min(rc.g_inducing, s.Xtr.rows());
  s.cfg = models::make_regression_config(models::variant_from_name(rc.variant), s.Xtr.cols(),
                                         s.ytr.cols(), m, gm, rc.rho, rc.nu, rc.lambda);
  s.cfg.flow.num_steps = rc.flow_steps;
  s.cfg.flow.mc_samples = rc.mc_samples;
  s.cfg.flow.horizon_T = rc.flow_horizon;
  return s;
}

struct DynamicsSetup {
  dynamics::DynamicsConfig cfg;
  data::TimeSeriesDataset train_series; // standardized prefix
  Eigen::VectorXd full_times;
  Matrix full_Y; // standardized, whole series
  data::Standardizer ys;
  long n_train = 0;
};

DynamicsSetup dynamics_setup(const RunConfig &rc) {
  data::TimeSeriesDataset ds = data::load_timeseries_csv(rc.dataset, rc.time_column);
  const long n = ds.Y.rows();
  DynamicsSetup s;
  s.n_train = static_cast<long>(std::ceil(rc.split_fraction * static_cast<double>(n)));
  if (s.n_train < 2 || s.n_train > n)
    throw ParseError("config: time-series training prefix is degenerate");

  s.ys = data::Standardizer::fit(ds.Y.topRows(s.n_train));
  s.full_times = ds.times;
  s.full_Y = s.ys.apply(ds.Y);
  s.train_series.times = ds.times.head(s.n_train);
  s.train_series.Y = s.full_Y.topRows(s.n_train);
  s.train_series.mask = ds.mask.topRows(s.n_train);
  s.train_series.names = ds.names;

  long eta = s.train_series.Y.cols();
  long m = std::min(rc.inducing, s.n_train);
  s.cfg = dynamics::make_dynamics_config(models::variant_from_name(rc.variant), eta, eta, m,
                                         rc.rho, rc.nu);
  s.cfg.max_step = rc.max_step;
  s.cfg.mc_paths = rc.mc_paths;
  return s;
}

std::string checkpoint_dir(const RunConfig &rc) { return rc.out + "/checkpoints"; }

struct SplitScore {
  double loglik, rmse;
};

SplitScore score_split(ParamStore &store, const models::RegressionConfig &cfg,
                       const data::Standardizer &ys, const Matrix &X, const Matrix &y_std,
                       const Matrix &y_raw, long n_samples, std::uint64_t seed) {
  models::Prediction pred = models::predict(store, cfg, X, n_samples, seed);
  SplitScore s;
  s.loglik = pred.log_density(y_std).mean();
  Matrix err = ys.invert(pred.mean) - y_raw;
  s.rmse = std::sqrt(err.array().square().mean());
  return s;
}

} // namespace

EvalMetrics eval_metrics(const RunConfig &rc) {
  if (rc.dynamics_mode())
    throw ParseError("eval requires a tabular dataset; use forecast for time series");
  RegressionSetup s = regression_setup(rc);
  ParamStore store;
  checkpoint::load(checkpoint_dir(rc) + "/final", store, nullptr);

  EvalMetrics m;
  m.n_train = s.Xtr.rows();
  m.n_test = s.Xte.rows();
  SplitScore tr =
      score_split(store, s.cfg, s.ys, s.Xtr, s.ytr, s.ytr_raw, rc.eval_samples, rc.seed);
  SplitScore te =
      score_split(store, s.cfg, s.ys, s.Xte, s.yte, s.yte_raw, rc.eval_samples, rc.seed);
  m.train_loglik = tr.loglik;
  m.train_rmse = tr.rmse;
  m.test_loglik = te.loglik;
  m.test_rmse = te.rmse;
  return m;
}

int cmd_train(const RunConfig &rc) {
  rc.validate();
  std::filesystem::create_directories(rc.out);
  train::FitOptions opts;
  opts.metrics_path = rc.out + "/train_metrics.csv";
  opts.checkpoint_dir = checkpoint_dir(rc);
  opts.config_snapshot = rc.serialize();

  ParamStore store;
  if (rc.dynamics_mode()) {
    DynamicsSetup s = dynamics_setup(rc);
    dynamics::init_dynamics(store, s.cfg, s.train_series.Y, rc.seed);
    long window = std::min(rc.window, s.n_train);
    train::fit_dynamics(store, s.cfg, s.train_series, window, rc.schedule, rc.seed, opts);
  } else {
    RegressionSetup s = regression_setup(rc);
    models::init_regression(store, s.cfg, s.Xtr, rc.seed);
    train::fit_regression(store, s.cfg, s.Xtr, s.ytr, rc.schedule, rc.seed, opts);
  }
  return 0;
}

int cmd_eval(const RunConfig &rc) {
  rc.validate();
  EvalMetrics m = eval_metrics(rc);
  std::ofstream out(rc.out + "/eval.csv");
  if (!out) throw ParseError("cannot write " + rc.out + "/eval.csv");
  out << rc.hash_comment() << "split,n,mean_loglik,rmse\n";
  out << "train," << m.n_train << ',' << fmt(m.train_loglik) << ',' << fmt(m.train_rmse) << "\n";
  out << "test," << m.n_test << ',' << fmt(m.test_loglik) << ',' << fmt(m.test_rmse) << "\n";
  return 0;
}

int cmd_forecast(const RunConfig &rc) {
  rc.validate();
  if (!rc.dynamics_mode()) throw ParseError("forecast requires a time-series dataset");
  if (!(rc.forecast_horizon > 0.0)) throw ParseError("config key 'forecast.horizon': must be positive");
  DynamicsSetup s = dynamics_setup(rc);
  ParamStore store;
  checkpoint::load(checkpoint_dir(rc) + "/final", store, nullptr);

  const long H = static_cast<long>(std::ceil(rc.forecast_horizon));
  const double t0 = s.train_series.times(s.n_train - 1);
  if (t0 + static_cast<double>(H) > s.full_times(s.full_times.size() - 1) + 1e-9)
    throw ParseError("forecast horizon extends past the held-out data");

  // Ground truth on the hourly grid, linearly interpolated from the held-out
  // tail of the (standardized) series.
  Matrix truth(H, s.full_Y.cols());
  for (long h = 0; h < H; ++h) {
    double tt = t0 + static_cast<double>(h + 1);
    long hi = 0;
    while (hi < s.full_times.size() && s.full_times(hi) < tt - 1e-9) ++hi;
    if (hi >= s.full_times.size()) hi = s.full_times.size() - 1;
    if (std::abs(s.full_times(hi) - tt) < 1e-9 || hi == 0) {
      truth.row(h) = s.full_Y.row(hi);
    } else {
      double w = (tt - s.full_times(hi - 1)) / (s.full_times(hi) - s.full_times(hi - 1));
      truth.row(h) = (1.0 - w) * s.full_Y.row(hi - 1) + w * s.full_Y.row(hi);
    }
  }

  dynamics::SequenceBatch context;
  context.times = s.train_series.times;
  context.obs = s.train_series.Y;
  context.mask = s.train_series.mask;
  dynamics::Forecast fc =
      dynamics::forecast(store, s.cfg, context, static_cast<double>(H), rc.n_sims, rc.seed, &truth);

  std::filesystem::create_directories(rc.out);
  {
    std::ofstream out(rc.out + "/forecast_trace.csv");
    if (!out) throw ParseError("cannot write " + rc.out + "/forecast_trace.csv");
    out << rc.hash_comment() << "hour,time,loglik_mean,loglik_se\n";
    for (long h = 0; h < H; ++h)
      out << (h + 1) << ',' << fmt(fc.times(h)) << ',' << fmt(fc.loglik_mean(h)) << ','
          << fmt(fc.loglik_se(h)) << "\n";
  }

  std::vector<std::pair<long, long>> pairs = rc.density_pairs;
  if (pairs.empty() && s.full_Y.cols() > 1) pairs.emplace_back(0, 1);
  if (rc.n_sims < 2) pairs.clear(); // a density grid needs more than one simulation
  for (auto [i, j] : pairs) {
    if (i < 0 || j < 0 || i >= s.full_Y.cols() || j >= s.full_Y.cols())
      throw ParseError("config key 'forecast.pairs': coordinate out of range");
    dynamics::Histogram hist = dynamics::cross_correlation_density(fc.observed, i, j);
    std::ofstream out(rc.out + "/density_" + std::to_string(i) + "_" + std::to_string(j) +
                      ".csv");
    out << rc.hash_comment() << "center_i,center_j,density\n";
    for (long a = 0; a < hist.density.rows(); ++a)
      for (long b = 0; b < hist.density.cols(); ++b)
        out << fmt(hist.centers_i(a)) << ',' << fmt(hist.centers_j(b)) << ','
            << fmt(hist.density(a, b)) << "\n";
  }
  return 0;
}

int cmd_ablate(const RunConfig &rc) {
  rc.validate();
  if (rc.dynamics_mode()) throw ParseError("ablate requires a tabular dataset");
  if (rc.ablate_variants.empty())
    throw ParseError("config key 'ablate.variants': at least one variant is required");
  std::vector<std::uint64_t> seeds = rc.ablate_seeds;
  if (seeds.empty()) seeds.push_back(rc.seed);

  std::filesystem::create_directories(rc.out);
  std::ofstream out(rc.out + "/ablation.csv");
  if (!out) throw ParseError("cannot write " + rc.out + "/ablation.csv");
  out << rc.hash_comment() << "dataset,variant,rho,seed,loglik,rmse,status\n";

  std::string dataset_name = std::filesystem::path(rc.dataset).stem().string();
  long successes = 0;
  for (const std::string &v : rc.ablate_variants) {
    for (std::uint64_t seed : seeds) {
      RunConfig sub = rc;
      sub.variant = v;
      sub.seed = seed;
      sub.out = rc.out + "/ablate_" + v + "_s" + std::to_string(seed);
      std::string rho_field =
          v == "diffwgp" ? std::to_string(rc.rho) : "NA"; // rho only shapes the Wishart noise
      try {
        cmd_train(sub);
        EvalMetrics m = eval_metrics(sub);
        out << dataset_name << ',' << v << ',' << rho_field << ',' << seed << ','
            << fmt(m.test_loglik) << ',' << fmt(m.test_rmse) << ",ok\n";
        ++successes;
      } catch (const std::exception &e) {
        std::cerr << "ablate " << v << " seed " << seed << " failed: " << e.what() << "\n";
        out << dataset_name << ',' << v << ',' << rho_field << ',' << seed << ",NA,NA,failed\n";
      }
    }
  }
  return successes > 0 ? 0 : 2;
}

int run(int argc, const char *const *argv) {
  CLI::App app{"wishflow: variational inference for SDE models with Wishart-process diffusions"};
  app.require_subcommand(1);

  std::string config_path, out, variant;
  long long seed = 0, rho = 0, nu = 0, steps = 0, mc = 0, n_sims = 0;
  double horizon = 0.0;
  auto *oc = app.add_option("--config", config_path, "config file (key = value lines)");
  auto *oseed = app.add_option("--seed", seed, "random seed");
  auto *oout = app.add_option("--out", out, "output directory");
  auto *ovar = app.add_option("--variant", variant, "sgp | nonoise | diffgp | diffwgp");
  auto *orho = app.add_option("--rho", rho, "Wishart rank");
  auto *onu = app.add_option("--nu", nu, "Wishart degrees of freedom");
  auto *osteps = app.add_option("--steps", steps, "flow integration steps");
  auto *omc = app.add_option("--mc-samples", mc, "Monte Carlo samples");
  auto *ohor = app.add_option("--horizon", horizon, "forecast horizon in hours");
  auto *osims = app.add_option("--n-sims", n_sims, "forecast simulations");
  for (const char *name : {"train", "eval", "forecast", "ablate"})
    app.add_subcommand(name)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig rc = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
    if (oseed->count()) {
      rc.seed = static_cast<std::uint64_t>(seed);
      rc.seed_set = true;
    }
    if (oout->count()) rc.out = out;
    if (ovar->count()) rc.variant = variant;
    if (orho->count()) rc.rho = rho;
    if (onu->count()) rc.nu = nu;
    if (osteps->count()) rc.flow_steps = steps;
    if (omc->count()) rc.mc_samples = mc;
    if (ohor->count()) rc.forecast_horizon = horizon;
    if (osims->count()) rc.n_sims = n_sims;
    (void)oc;

    if (app.got_subcommand("train")) return cmd_train(rc);
    if (app.got_subcommand("eval")) return cmd_eval(rc);
    if (app.got_subcommand("forecast")) return cmd_forecast(rc);
    return cmd_ablate(rc);
  } catch (const TrainingError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError &e) { // includes DivergenceError
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

} // namespace wishflow::cli
