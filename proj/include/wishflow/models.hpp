#pragma once

#include "wishflow/sdeflow.hpp"
#include "wishflow/wishart.hpp"

namespace wishflow::models {

// SGP: sparse GP on the raw inputs, no flow.
// NoNoise: deterministic flow (drift only), then the GP.
// DiffGP: flow with diagonal diffusion from the drift layer's conditional
//         variance.
// DiffWGP: flow with Wishart-process diffusion.
enum class ModelVariant { SGP, NoNoise, DiffGP, DiffWGP };

const char *variant_name(ModelVariant v);
ModelVariant variant_from_name(const std::string &name);

struct RegressionConfig {
  ModelVariant variant = ModelVariant::DiffWGP;
  long input_dim = 0; // D; the flow preserves dimension, so g also sees D
  long out_dim = 1;   // eta
  sdeflow::FlowConfig flow;
  svgp::SvgpConfig flow_layer;       // fixed_prior_covariance, D outputs
  wishart::WishartConfig diffusion;  // DiffWGP only
  svgp::SvgpConfig g_layer;          // eta outputs
  double sigma_y2_init = 0.1;
  std::string noise_name = "lik.noise_raw";
};

// Canonical parameter naming; the diffusion's J layer shares the flow kernel
// and inducing inputs. dof defaults to rank when 0.
RegressionConfig make_regression_config(ModelVariant variant, long input_dim, long out_dim,
                                        long flow_inducing, long g_inducing, long rank = 5,
                                        long dof = 0, bool lambda_enabled = true);

// Inducing inputs from k-means on X; observation noise softplus-raw; only the
// layers the variant uses are registered.
void init_regression(ParamStore &store, const RegressionConfig &cfg, const ad::Matrix &X,
                     std::uint64_t seed);

struct BoundModel {
  const RegressionConfig *cfg = nullptr;
  svgp::BoundSvgp flow_layer;
  wishart::BoundWishart diffusion;
  svgp::BoundSvgp g_layer;
  ad::Var sigma_y2; // softplus(noise_raw), scalar
};

BoundModel bind_model(GraphContext &ctx, const RegressionConfig &cfg);

// The variant's random field; SGP has no field (throws).
sdeflow::FieldSampler field_sampler(ad::Tape &tape, const BoundModel &model);

// Marginals of g at the terminal states, one entry per MC sample. SGP and
// NoNoise are deterministic and return a single entry.
std::vector<svgp::Marginal> forward(ad::Tape &tape, const BoundModel &model, const ad::Matrix &X,
                                    const rng::NoiseStream &noise);

// Mean over MC samples of sum_i log N(y_i; mean_i, diag(var_i) + sigma_y2 I):
// g is marginalized analytically, MC covers only the flow randomness.
ad::Var expected_loglik(ad::Tape &tape, const std::vector<svgp::Marginal> &gsamples,
                        const ad::Matrix &y, ad::Var sigma_y2);

struct ElboBreakdown {
  ad::Var expected_loglik;
  ad::Var kl_g, kl_f, kl_sigma;
  ad::Var total; // scale*E[loglik] - kl_g - c^2 kl_f - c kl_sigma
  double scale = 1.0;
};

// c in [0, 1] anneals the flow KL terms; scale is the minibatch-to-dataset
// factor N/|batch| applied to the likelihood only.
ElboBreakdown elbo(GraphContext &ctx, const RegressionConfig &cfg, const ad::Matrix &X,
                   const ad::Matrix &y, double c, const rng::NoiseStream &noise,
                   double scale = 1.0);

// Gaussian-mixture predictive over MC terminal samples; component variances
// include the observation noise.
struct Prediction {
  ad::Matrix mean; // n x eta, mixture mean
  ad::Matrix var;  // n x eta, mixture variance
  std::vector<ad::Matrix> comp_mean, comp_var;

  // Per-point predictive log density, n x 1: log-mean-exp over components of
  // the joint Gaussian density across outputs.
  ad::Matrix log_density(const ad::Matrix &y) const;
};

Prediction predict(ParamStore &store, const RegressionConfig &cfg, const ad::Matrix &X,
                   long n_samples, std::uint64_t noise_seed);

} // namespace wishflow::models
