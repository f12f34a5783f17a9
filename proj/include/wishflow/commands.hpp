#pragma once

#include <string>
#include <utility>
#include <vector>

#include "wishflow/train.hpp"

namespace wishflow::cli {

// One run = one dataset + model + schedule + seed + output directory.
//
// Config files use a single grammar: one `key = value` per line, '#' starts
// a comment, dotted keys group related settings. Command-line flags override
// file values. Recognized keys:
//
//   dataset           CSV path
//   targets           comma-separated target columns (tabular regression)
//   time_column       time column in hours (switches to dynamics mode)
//   split.fraction    train fraction (tabular split / time-series prefix)
//   window            observations per training window (dynamics)
//   variant           sgp | nonoise | diffgp | diffwgp
//   rho, nu           Wishart rank and degrees of freedom (nu = 0 means rho)
//   lambda            true/false: additive diagonal in the Wishart noise
//   model.inducing    flow inducing points (capped at the train size)
//   model.g_inducing  regression-layer inducing points
//   flow.steps, flow.mc_samples, flow.horizon
//   dynamics.max_step, dynamics.mc_paths
//   train.phase1_iters, train.total_iters, train.phase1_lr, train.phase2_lr,
//   train.anneal_iters, train.batch_size, train.beta1, train.train_inducing,
//   train.clip_norm, train.log_every
//   eval.samples      predictive mixture components per point
//   forecast.horizon, forecast.n_sims
//   forecast.pairs    coordinate pairs for the density grids, e.g. "0:1,1:2"
//   ablate.variants, ablate.seeds   comma-separated lists
//   seed              mandatory
//   out               output directory
struct RunConfig {
  std::string dataset;
  std::vector<std::string> targets;
  std::string time_column;
  double split_fraction = 0.9;
  long window = 50;

  std::string variant = "diffwgp";
  long rho = 5, nu = 0;
  bool lambda = true;
  long inducing = 100, g_inducing = 100;
  long flow_steps = 20, mc_samples = 5;
  double flow_horizon = 1.0;
  double max_step = 0.05;
  long mc_paths = 5;

  train::Schedule schedule;

  long eval_samples = 64;
  double forecast_horizon = 48.0;
  long n_sims = 50;
  std::vector<std::pair<long, long>> density_pairs; // default: (0, 1) when eta > 1

  std::vector<std::string> ablate_variants;
  std::vector<std::uint64_t> ablate_seeds;

  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;

  bool dynamics_mode() const { return !time_column.empty(); }

  void set(const std::string &key, const std::string &value); // throws ParseError
  void validate() const;                                      // throws ParseError
  std::string serialize() const;
  std::string hash_comment() const; // "# config_hash <hex>\n"

  static RunConfig from_file(const std::string &path);
};

// Per-split metrics in the shape emitted by cmd_eval: per-point predictive
// log density on standardized targets, RMSE in the original units.
struct EvalMetrics {
  long n_train = 0, n_test = 0;
  double train_loglik = 0, train_rmse = 0;
  double test_loglik = 0, test_rmse = 0;
};

EvalMetrics eval_metrics(const RunConfig &rc);

// Each command returns a process exit code: 0 success, 1 usage/config,
// 2 numerical abort. Validation/numerical errors are thrown; run() maps them.
int cmd_train(const RunConfig &rc);
int cmd_eval(const RunConfig &rc);
int cmd_forecast(const RunConfig &rc);
int cmd_ablate(const RunConfig &rc);

// Full command-line surface (subcommands train/eval/forecast/ablate).
int run(int argc, const char *const *argv);

} // namespace wishflow::cli
