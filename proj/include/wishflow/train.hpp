#pragma once

#include <functional>
#include <map>
#include <set>

#include "wishflow/data.hpp"
#include "wishflow/dynamics.hpp"
#include "wishflow/models.hpp"

namespace wishflow::train {

struct AdamState {
  double lr = 0.01;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  std::map<std::string, ad::Matrix> m, v; // lazily created per parameter
};

// Standard Adam descent step on the listed gradients (callers minimizing a
// loss; ELBO ascent passes the negated gradient). clip_norm > 0 rescales the
// global gradient norm first. Non-finite gradients abort, naming the
// parameter.
void adam_step(AdamState &state, ParamStore &params,
               const std::map<std::string, ad::Matrix> &grads, double clip_norm = 0.0);

// KL warm-up: min(1, iter_in_phase2 / anneal_iters).
double anneal_coefficient(long iter_in_phase2, long anneal_iters = 4000);

// FNV-1a, used to stamp emitted CSVs with a hash of the config snapshot.
std::uint64_t fnv1a64(const std::string &s);

struct Schedule {
  long phase1_iters = 10000; // final-layer warm-start
  long total_iters = 50000;
  double phase1_lr = 0.01;
  double phase2_lr = 0.001;
  long anneal_iters = 4000;
  long batch_size = 2000; // capped at N
  double beta1 = 0.9;     // 0.5 eases momentum for the dynamical task
  bool train_inducing = true;
  double clip_norm = 0.0; // 0 = off; 100 recommended for dynamics
  long log_every = 100;

  void validate() const;
};

struct FitOptions {
  std::string metrics_path;   // CSV written when non-empty
  std::string checkpoint_dir; // checkpoints at the phase boundary and the end
  std::string resume_from;    // resume a previous run's checkpoint directory
  std::string config_snapshot;
};

struct MetricRow {
  long iteration;
  double elbo, expected_loglik, kl_g, kl_f, kl_sigma, wall_ms;
};

struct FitResult {
  std::vector<MetricRow> log;
  double final_elbo = 0.0;
  long iterations = 0;
};

// One ELBO evaluation on a minibatch; fit owns the tape and calls backward.
using ElboFn = std::function<models::ElboBreakdown(GraphContext &ctx,
                                                   const std::vector<long> &batch, double c,
                                                   std::uint64_t iter)>;

// Two-phase loop: phase 1 trains only phase1_params at phase1_lr; phase 2
// trains every trainable parameter at phase2_lr with KL annealing. All
// randomness is a pure function of (seed, iteration), so resumed runs are
// bitwise identical. Ten consecutive non-finite ELBOs abort.
FitResult fit(ParamStore &store, long num_points, const std::set<std::string> &phase1_params,
              const ElboFn &elbo_fn, const Schedule &sched, std::uint64_t seed,
              const FitOptions &opts = {});

// Regression convenience: minibatches X/y rows, scale N/|batch|.
FitResult fit_regression(ParamStore &store, const models::RegressionConfig &cfg,
                         const ad::Matrix &X, const ad::Matrix &y, const Schedule &sched,
                         std::uint64_t seed, const FitOptions &opts = {});

// Dynamics: each "point" is a contiguous window of window_len observations;
// a minibatch is one window per iteration (batch_size windows).
FitResult fit_dynamics(ParamStore &store, const dynamics::DynamicsConfig &cfg,
                       const data::TimeSeriesDataset &series, long window_len,
                       const Schedule &sched, std::uint64_t seed, const FitOptions &opts = {});

} // namespace wishflow::train
