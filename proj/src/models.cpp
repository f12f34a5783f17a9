#include "wishflow/models.hpp"

#include <cmath>

namespace wishflow::models {

using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
} // namespace

const char *variant_name(ModelVariant v) {
  switch (v) {
  case ModelVariant::SGP: return "sgp";
  case ModelVariant::NoNoise: return "nonoise";
  case ModelVariant::DiffGP: return "diffgp";
  case ModelVariant::DiffWGP: return "diffwgp";
  }
  return "?";
}

ModelVariant variant_from_name(const std::string &name) {
  if (name == "sgp") return ModelVariant::SGP;
  if (name == "nonoise") return ModelVariant::NoNoise;
  if (name == "diffgp") return ModelVariant::DiffGP;
  if (name == "diffwgp") return ModelVariant::DiffWGP;
  throw DimensionError("unknown model variant: " + name);
}

RegressionConfig make_regression_config(ModelVariant variant, long input_dim, long out_dim,
                                        long flow_inducing, long g_inducing, long rank, long dof,
                                        bool lambda_enabled) {
  if (input_dim < 1 || out_dim < 1)
    throw DimensionError("make_regression_config: dimensions must be positive");
  RegressionConfig cfg;
  cfg.variant = variant;
  cfg.input_dim = input_dim;
  cfg.out_dim = out_dim;

  cfg.flow_layer.prefix = "flow.f";
  cfg.flow_layer.num_inducing = flow_inducing;
  cfg.flow_layer.input_dim = input_dim;
  cfg.flow_layer.num_outputs = input_dim;
  cfg.flow_layer.fixed_prior_covariance = true;
  cfg.flow_layer.kernel = {"flow.kern", input_dim};
  cfg.flow_layer.inducing_name = "flow.Z";

  cfg.diffusion.prefix = "wis";
  cfg.diffusion.dim = input_dim;
  cfg.diffusion.rank = rank;
  cfg.diffusion.dof = dof > 0 ? dof : rank;
  cfg.diffusion.lambda_enabled = lambda_enabled;
  cfg.diffusion.j_layer.prefix = "wis.J";
  cfg.diffusion.j_layer.num_inducing = flow_inducing;
  cfg.diffusion.j_layer.input_dim = input_dim;
  cfg.diffusion.j_layer.num_outputs = cfg.diffusion.rank * cfg.diffusion.dof;
  cfg.diffusion.j_layer.kernel = {"flow.kern", input_dim};
  cfg.diffusion.j_layer.inducing_name = "flow.Z";

  cfg.g_layer.prefix = "g";
  cfg.g_layer.num_inducing = g_inducing;
  cfg.g_layer.input_dim = input_dim;
  cfg.g_layer.num_outputs = out_dim;
  cfg.g_layer.kernel = {"g.kern", input_dim};
  return cfg;
}

void init_regression(ParamStore &store, const RegressionConfig &cfg, const Matrix &X,
                     std::uint64_t seed) {
  if (X.cols() != cfg.input_dim) throw DimensionError("init_regression: X dimension mismatch");
  const bool has_flow = cfg.variant != ModelVariant::SGP;
  if (has_flow) {
    kernels::init_rbf_ard(store, cfg.flow_layer.kernel, 1.0, 1.0);
    svgp::init_svgp(store, cfg.flow_layer,
                    svgp::kmeans_centroids(X, cfg.flow_layer.num_inducing, seed));
    if (cfg.variant == ModelVariant::DiffWGP) {
      svgp::init_svgp(store, cfg.diffusion.j_layer, store.at(cfg.flow_layer.z_name()));
      wishart::init_wishart(store, cfg.diffusion, seed);
    }
  }
  kernels::init_rbf_ard(store, cfg.g_layer.kernel, 1.0, 1.0);
  svgp::init_svgp(store, cfg.g_layer, svgp::kmeans_centroids(X, cfg.g_layer.num_inducing, seed + 1));
  store.add(cfg.noise_name, Matrix::Constant(1, 1, ad::softplus_inv(cfg.sigma_y2_init)));
}

BoundModel bind_model(GraphContext &ctx, const RegressionConfig &cfg) {
  BoundModel m;
  m.cfg = &cfg;
  if (cfg.variant != ModelVariant::SGP) m.flow_layer = bind_svgp(ctx, cfg.flow_layer);
  if (cfg.variant == ModelVariant::DiffWGP) m.diffusion = bind_wishart(ctx, cfg.diffusion);
  m.g_layer = bind_svgp(ctx, cfg.g_layer);
  m.sigma_y2 = ad::softplus(ctx.param(cfg.noise_name));
  return m;
}

sdeflow::FieldSampler field_sampler(Tape &, const BoundModel &model) {
  const RegressionConfig &cfg = *model.cfg;
  if (cfg.variant == ModelVariant::SGP)
    throw DimensionError("field_sampler: the SGP variant has no flow");
  sdeflow::FieldSampler f;
  f.dim = cfg.input_dim;
  const svgp::BoundSvgp *flow = &model.flow_layer;
  f.drift = [flow](Tape &t, Var x) { return conditional(t, *flow, x).mean; };
  switch (cfg.variant) {
  case ModelVariant::NoNoise:
    break; // deterministic flow
  case ModelVariant::DiffGP: {
    f.noise_b_cols = cfg.input_dim;
    f.diffusion = [flow](Tape &t, Var x, const Matrix &, const Matrix &nb) {
      Var sd = ad::sqrt(ad::clamp_nonneg(conditional(t, *flow, x).var));
      return ad::mul(sd, t.constant(nb));
    };
    break;
  }
  case ModelVariant::DiffWGP: {
    const wishart::BoundWishart *w = &model.diffusion;
    f.noise_j_cols = cfg.diffusion.rank * cfg.diffusion.dof;
    f.noise_b_cols = wishart::brownian_cols(cfg.diffusion);
    f.diffusion = [w](Tape &t, Var x, const Matrix &nj, const Matrix &nb) {
      return diffusion_term(t, *w, x, nj, nb);
    };
    break;
  }
  default:
    break;
  }
  return f;
}

std::vector<svgp::Marginal> forward(Tape &tape, const BoundModel &model, const Matrix &X,
                                    const rng::NoiseStream &noise) {
  const RegressionConfig &cfg = *model.cfg;
  Var x0 = tape.constant(X);
  if (cfg.variant == ModelVariant::SGP) return {conditional(tape, model.g_layer, x0)};

  sdeflow::FieldSampler field = field_sampler(tape, model);
  // The drift-only flow is deterministic; one sample carries no MC error.
  const long samples = cfg.variant == ModelVariant::NoNoise ? 1 : cfg.flow.mc_samples;
  std::vector<svgp::Marginal> out;
  out.reserve(samples);
  for (long s = 0; s < samples; ++s) {
    Var xT = integrate(tape, field, x0, cfg.flow, noise, static_cast<std::uint64_t>(s));
    out.push_back(conditional(tape, model.g_layer, xT));
  }
  return out;
}

Var expected_loglik(Tape &tape, const std::vector<svgp::Marginal> &gsamples, const Matrix &y,
                    Var sigma_y2) {
  if (gsamples.empty()) throw DimensionError("expected_loglik: no samples");
  if (!(sigma_y2.value()(0, 0) > 0.0))
    throw DimensionError("expected_loglik: observation noise must be positive");
  const long n = y.rows(), eta = y.cols();
  Var yc = tape.constant(y);
  Var acc;
  for (const svgp::Marginal &g : gsamples) {
    if (g.mean.rows() != n || g.mean.cols() != eta)
      throw DimensionError("expected_loglik: marginal shape mismatch");
    Var v = ad::add(g.var, ad::broadcast_rows(ad::broadcast_cols(sigma_y2, eta), n));
    Var quad = ad::div(ad::square(ad::sub(yc, g.mean)), v);
    Var term = ad::scale(ad::sum(ad::add_scalar(ad::add(ad::log(v), quad), kLog2Pi)), -0.5);
    acc = acc.tape() ? ad::add(acc, term) : term;
  }
  return ad::scale(acc, 1.0 / static_cast<double>(gsamples.size()));
}

ElboBreakdown elbo(GraphContext &ctx, const RegressionConfig &cfg, const Matrix &X,
                   const Matrix &y, double c, const rng::NoiseStream &noise, double scale) {
  if (c < 0.0 || c > 1.0) throw DimensionError("elbo: anneal coefficient must be in [0, 1]");
  Tape &tape = ctx.tape();
  BoundModel model = bind_model(ctx, cfg);

  ElboBreakdown out;
  out.scale = scale;
  out.expected_loglik = expected_loglik(tape, forward(tape, model, X, noise), y, model.sigma_y2);
  Var zero = tape.constant(Matrix::Zero(1, 1));
  out.kl_g = kl_full(tape, model.g_layer);
  out.kl_f = cfg.variant == ModelVariant::SGP ? zero : kl_fixed_cov(tape, model.flow_layer);
  out.kl_sigma =
      cfg.variant == ModelVariant::DiffWGP ? kl_full(tape, model.diffusion.j_layer) : zero;

  out.total = ad::sub(ad::scale(out.expected_loglik, scale), out.kl_g);
  out.total = ad::sub(out.total, ad::scale(out.kl_f, c * c));
  out.total = ad::sub(out.total, ad::scale(out.kl_sigma, c));
  return out;
}

Matrix Prediction::log_density(const Matrix &y) const {
  const long n = y.rows(), S = static_cast<long>(comp_mean.size());
  Matrix comp_ll(n, S);
  for (long s = 0; s < S; ++s) {
    Eigen::ArrayXXd v = comp_var[s].array();
    Eigen::ArrayXXd q = (y.array() - comp_mean[s].array()).square() / v;
    comp_ll.col(s) = (-0.5 * (kLog2Pi + v.log() + q)).rowwise().sum();
  }
  Matrix out(n, 1);
  for (long i = 0; i < n; ++i) {
    double mx = comp_ll.row(i).maxCoeff();
    out(i, 0) = mx + std::log((comp_ll.row(i).array() - mx).exp().mean());
  }
  return out;
}

Prediction predict(ParamStore &store, const RegressionConfig &cfg, const Matrix &X,
                   long n_samples, std::uint64_t noise_seed) {
  if (n_samples < 1) throw DimensionError("predict: n_samples must be positive");
  Tape tape;
  GraphContext ctx(tape, store);
  BoundModel model = bind_model(ctx, cfg);
  RegressionConfig eval_cfg = cfg;
  eval_cfg.flow.mc_samples = n_samples;
  BoundModel eval_model = model;
  eval_model.cfg = &eval_cfg;

  rng::NoiseStream noise(noise_seed);
  std::vector<svgp::Marginal> gs = forward(tape, eval_model, X, noise);

  Prediction p;
  const double sy2 = model.sigma_y2.value()(0, 0);
  for (const svgp::Marginal &g : gs) {
    p.comp_mean.push_back(g.mean.value());
    p.comp_var.push_back(g.var.value().array().max(0.0).matrix() +
                         Matrix::Constant(g.var.rows(), g.var.cols(), sy2));
  }
  const long S = static_cast<long>(p.comp_mean.size());
  p.mean = Matrix::Zero(X.rows(), cfg.out_dim);
  Matrix second = Matrix::Zero(X.rows(), cfg.out_dim);
  for (long s = 0; s < S; ++s) {
    p.mean += p.comp_mean[s];
    second += p.comp_var[s] + p.comp_mean[s].cwiseProduct(p.comp_mean[s]);
  }
  p.mean /= static_cast<double>(S);
  p.var = second / static_cast<double>(S) - p.mean.cwiseProduct(p.mean);
  return p;
}

} // namespace wishflow::models
