#pragma once

#include "wishflow/models.hpp"

namespace wishflow::dynamics {

// Latent SDE dynamics with structured observation noise:
//   y_t = g(x_t) + e_t,  e_t ~ N(0, A Sigma(x_t) A^T + Lambda).
// The flow's own white-noise diagonal stays disabled so the observation
// covariance keeps its low-rank-plus-diagonal form.
struct DynamicsConfig {
  models::ModelVariant variant = models::ModelVariant::DiffWGP;
  long obs_dim = 0;    // eta
  long latent_dim = 0; // D
  bool identity_g = true; // g(x) = x (requires latent_dim == obs_dim)
  bool zero_drift = false; // drift frozen at zero (random-walk ablation)
  double max_step = 0.05;  // sub-step cap between observations, in hours
  long mc_paths = 5;
  svgp::SvgpConfig flow_layer;
  wishart::WishartConfig diffusion;
  svgp::SvgpConfig g_layer; // used when !identity_g
  std::string a_name = "obs.A";
  std::string lambda_name = "obs.lambda_raw";

  std::string x0_name(const std::string &sequence_id) const { return "dyn.x0." + sequence_id; }
};

DynamicsConfig make_dynamics_config(models::ModelVariant variant, long obs_dim, long latent_dim,
                                    long flow_inducing, long rank = 5, long dof = 0,
                                    bool identity_g = true, long g_inducing = 0);

// A starts with orthonormal rows; latent-space inits come from mapping the
// observations through A's pseudo-inverse.
void init_dynamics(ParamStore &store, const DynamicsConfig &cfg, const ad::Matrix &Y,
                   std::uint64_t seed);

// Free initial state for one training sequence (non-identity g only).
void ensure_x0(ParamStore &store, const DynamicsConfig &cfg, const std::string &sequence_id,
               const Eigen::RowVectorXd &init);

// One observed sequence; mask marks entries that were actually measured
// (interpolated fill-ins still enter the likelihood).
struct SequenceBatch {
  Eigen::VectorXd times; // strictly increasing, hours
  ad::Matrix obs;        // len x eta
  ad::Matrix mask;       // len x eta, 1 = observed; empty means all observed
  std::string sequence_id; // keys the learned x0 when g is not the identity

  void validate(long eta) const;
};

struct BoundDynamics {
  const DynamicsConfig *cfg = nullptr;
  svgp::BoundSvgp flow_layer;
  wishart::BoundWishart diffusion; // DiffWGP only
  svgp::BoundSvgp g_layer;         // !identity_g only
  ad::Var A;          // eta x D
  ad::Var lambda_obs; // eta x 1, positive
};

BoundDynamics bind_dynamics(GraphContext &ctx, const DynamicsConfig &cfg);

// log N(y; g, (A F)(A F)^T + diag(lambda)) via the matrix-determinant lemma
// and the Woodbury identity; B is never materialized. F may have zero
// columns (Sigma = 0). y, g, lambda are eta x 1 columns.
ad::Var obs_loglik(ad::Tape &tape, ad::Var y, ad::Var g, ad::Var F, ad::Var A, ad::Var lambda);

// The latent random field of the configured variant.
sdeflow::FieldSampler latent_field(ad::Tape &tape, const BoundDynamics &model);

// ELBO for one sequence: EM-integrates the latent paths across the time grid
// (steps capped at max_step) and accumulates obs_loglik at every observation
// time on every MC path. scale is the sequences-to-dataset factor.
models::ElboBreakdown sequence_elbo(GraphContext &ctx, const DynamicsConfig &cfg,
                                    const SequenceBatch &batch, double c,
                                    const rng::NoiseStream &noise, double scale = 1.0);

struct Forecast {
  std::vector<ad::Matrix> latent;   // per simulation: H x D
  std::vector<ad::Matrix> observed; // per simulation: H x eta (observation means)
  Eigen::VectorXd times;            // H, absolute hours
  // Filled when truth is provided: per-hour mean and standard error across
  // simulations of the held-out log-likelihood.
  Eigen::VectorXd loglik_mean, loglik_se;
};

// Rolls n_sims latent paths forward from the last context observation on an
// hourly grid. truth (horizon x eta), when given, is scored at each hour.
Forecast forecast(ParamStore &store, const DynamicsConfig &cfg, const SequenceBatch &context,
                  double horizon_hours, long n_sims, std::uint64_t seed,
                  const ad::Matrix *truth = nullptr);

struct Histogram {
  Eigen::VectorXd centers_i, centers_j;
  ad::Matrix density; // bins x bins, sums to 1
};

// Joint empirical density of two observed coordinates pooled over
// simulations and horizon times.
Histogram cross_correlation_density(const std::vector<ad::Matrix> &observed, long dim_i,
                                    long dim_j, long bins = 30);

} // namespace wishflow::dynamics
