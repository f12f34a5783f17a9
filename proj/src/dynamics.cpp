#include "wishflow/dynamics.hpp"

#include <cmath>

namespace wishflow::dynamics {

using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
// Noise-substream role tags.
constexpr std::uint64_t kTagJ = 0x64794a00ULL;    // diffusion reparameterization
constexpr std::uint64_t kTagB = 0x64794200ULL;    // Brownian increments
constexpr std::uint64_t kTagObsJ = 0x64794f00ULL; // Sigma sample at observation times
} // namespace

DynamicsConfig make_dynamics_config(models::ModelVariant variant, long obs_dim, long latent_dim,
                                    long flow_inducing, long rank, long dof, bool identity_g,
                                    long g_inducing) {
  if (obs_dim < 1 || latent_dim < 1)
    throw DimensionError("make_dynamics_config: dimensions must be positive");
  if (identity_g && obs_dim != latent_dim)
    throw DimensionError("make_dynamics_config: identity g requires latent_dim == obs_dim");
  if (variant == models::ModelVariant::SGP)
    throw DimensionError("make_dynamics_config: the dynamical model needs a flow");
  DynamicsConfig cfg;
  cfg.variant = variant;
  cfg.obs_dim = obs_dim;
  cfg.latent_dim = latent_dim;
  cfg.identity_g = identity_g;

  cfg.flow_layer.prefix = "dflow.f";
  cfg.flow_layer.num_inducing = flow_inducing;
  cfg.flow_layer.input_dim = latent_dim;
  cfg.flow_layer.num_outputs = latent_dim;
  cfg.flow_layer.fixed_prior_covariance = true;
  cfg.flow_layer.kernel = {"dflow.kern", latent_dim};
  cfg.flow_layer.inducing_name = "dflow.Z";

  cfg.diffusion.prefix = "dwis";
  cfg.diffusion.dim = latent_dim;
  cfg.diffusion.rank = rank;
  cfg.diffusion.dof = dof > 0 ? dof : rank;
  // Keep B = (AF)(AF)^T + Lambda exactly low-rank plus diagonal: the flow's
  // own white-noise term stays off in the dynamical model.
  cfg.diffusion.lambda_enabled = false;
  cfg.diffusion.j_layer.prefix = "dwis.J";
  cfg.diffusion.j_layer.num_inducing = flow_inducing;
  cfg.diffusion.j_layer.input_dim = latent_dim;
  cfg.diffusion.j_layer.num_outputs = cfg.diffusion.rank * cfg.diffusion.dof;
  cfg.diffusion.j_layer.kernel = {"dflow.kern", latent_dim};
  cfg.diffusion.j_layer.inducing_name = "dflow.Z";

  cfg.g_layer.prefix = "dg";
  cfg.g_layer.num_inducing = g_inducing > 0 ? g_inducing : flow_inducing;
  cfg.g_layer.input_dim = latent_dim;
  cfg.g_layer.num_outputs = obs_dim;
  cfg.g_layer.kernel = {"dg.kern", latent_dim};
  return cfg;
}

void init_dynamics(ParamStore &store, const DynamicsConfig &cfg, const Matrix &Y,
                   std::uint64_t seed) {
  if (Y.cols() != cfg.obs_dim) throw DimensionError("init_dynamics: Y dimension mismatch");
  if (cfg.obs_dim > cfg.latent_dim)
    throw DimensionError("init_dynamics: A needs obs_dim <= latent_dim for orthonormal rows");
  rng::NoiseStream ns(seed);
  Matrix G = ns.normal(0, 0, 0xa0ULL, cfg.latent_dim, cfg.obs_dim);
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = Matrix(qr.householderQ()).leftCols(cfg.obs_dim);
  store.add(cfg.a_name, Q.transpose()); // eta x D, orthonormal rows
  store.add(cfg.lambda_name, Matrix::Constant(cfg.obs_dim, 1, ad::softplus_inv(0.1)));

  Matrix Xlat = Y * Q; // A^+ y per row at the orthonormal init
  kernels::init_rbf_ard(store, cfg.flow_layer.kernel, 1.0, 1.0);
  svgp::init_svgp(store, cfg.flow_layer,
                  svgp::kmeans_centroids(Xlat, cfg.flow_layer.num_inducing, seed));
  if (cfg.variant == models::ModelVariant::DiffWGP) {
    svgp::init_svgp(store, cfg.diffusion.j_layer, store.at(cfg.flow_layer.z_name()));
    wishart::init_wishart(store, cfg.diffusion, seed);
  }
  if (!cfg.identity_g) {
    kernels::init_rbf_ard(store, cfg.g_layer.kernel, 1.0, 1.0);
    svgp::init_svgp(store, cfg.g_layer,
                    svgp::kmeans_centroids(Xlat, cfg.g_layer.num_inducing, seed + 1));
  }
}

void ensure_x0(ParamStore &store, const DynamicsConfig &cfg, const std::string &sequence_id,
               const Eigen::RowVectorXd &init) {
  std::string name = cfg.x0_name(sequence_id);
  if (!store.has(name)) store.add(name, Matrix(init));
}

void SequenceBatch::validate(long eta) const {
  if (obs.rows() != times.size()) throw DimensionError("SequenceBatch: times/obs length mismatch");
  if (obs.cols() != eta) throw DimensionError("SequenceBatch: observation dimension mismatch");
  if (times.size() < 1) throw DimensionError("SequenceBatch: empty sequence");
  for (long i = 1; i < times.size(); ++i)
    if (!(times(i) > times(i - 1)))
      throw DimensionError("SequenceBatch: times must be strictly increasing");
  if (mask.size() > 0 && (mask.rows() != obs.rows() || mask.cols() != obs.cols()))
    throw DimensionError("SequenceBatch: mask shape mismatch");
}

BoundDynamics bind_dynamics(GraphContext &ctx, const DynamicsConfig &cfg) {
  BoundDynamics m;
  m.cfg = &cfg;
  m.flow_layer = bind_svgp(ctx, cfg.flow_layer);
  if (cfg.variant == models::ModelVariant::DiffWGP) m.diffusion = bind_wishart(ctx, cfg.diffusion);
  if (!cfg.identity_g) m.g_layer = bind_svgp(ctx, cfg.g_layer);
  m.A = ctx.param(cfg.a_name);
  m.lambda_obs = ad::softplus(ctx.param(cfg.lambda_name));
  return m;
}

Var obs_loglik(Tape &tape, Var y, Var g, Var F, Var A, Var lambda) {
  const long eta = y.rows();
  if (y.cols() != 1 || g.rows() != eta || g.cols() != 1 || lambda.rows() != eta ||
      lambda.cols() != 1 || A.rows() != eta)
    throw DimensionError("obs_loglik: shape mismatch");
  if (F.cols() > 0 && F.rows() != A.cols())
    throw DimensionError("obs_loglik: factor rows must match A columns");
  if (!(lambda.value().minCoeff() > 0.0))
    throw DimensionError("obs_loglik: lambda must be positive");

  Var r = ad::sub(y, g);
  Var rl = ad::div(r, lambda);
  Var quad = ad::sum(ad::mul(r, rl));
  Var logdet = ad::sum(ad::log(lambda));
  if (F.cols() > 0) {
    const long nu = F.cols();
    Var U = ad::matmul(A, F);                         // eta x nu
    Var W = ad::div(U, ad::broadcast_cols(lambda, nu)); // Lambda^-1 U
    Var cap = ad::add(tape.constant(Matrix::Identity(nu, nu)), ad::matmul(ad::transpose(U), W));
    Var Lc = ad::cholesky_exact(cap);
    logdet = ad::add(logdet, ad::logdet_from_chol(Lc));
    Var s = ad::solve_lower(Lc, ad::matmul(ad::transpose(W), r));
    quad = ad::sub(quad, ad::sum(ad::square(s)));
  }
  return ad::scale(ad::add_scalar(ad::add(logdet, quad), eta * kLog2Pi), -0.5);
}

sdeflow::FieldSampler latent_field(Tape &, const BoundDynamics &model) {
  const DynamicsConfig &cfg = *model.cfg;
  sdeflow::FieldSampler f;
  f.dim = cfg.latent_dim;
  const svgp::BoundSvgp *flow = &model.flow_layer;
  if (!cfg.zero_drift)
    f.drift = [flow](Tape &t, Var x) { return conditional(t, *flow, x).mean; };
  switch (cfg.variant) {
  case models::ModelVariant::DiffGP: {
    f.noise_b_cols = cfg.latent_dim;
    f.diffusion = [flow](Tape &t, Var x, const Matrix &, const Matrix &nb) {
      Var sd = ad::sqrt(ad::clamp_nonneg(conditional(t, *flow, x).var));
      return ad::mul(sd, t.constant(nb));
    };
    break;
  }
  case models::ModelVariant::DiffWGP: {
    const wishart::BoundWishart *w = &model.diffusion;
    f.noise_j_cols = cfg.diffusion.rank * cfg.diffusion.dof;
    f.noise_b_cols = wishart::brownian_cols(cfg.diffusion);
    f.diffusion = [w](Tape &t, Var x, const Matrix &nj, const Matrix &nb) {
      return diffusion_term(t, *w, x, nj, nb);
    };
    break;
  }
  default:
    break; // NoNoise: deterministic flow
  }
  return f;
}

namespace {

// Pseudo-inverse map of the first/last observation into latent space. Treated
// as a constant: gradients do not flow into A through the initial state.
Matrix latent_from_obs(const Matrix &A, const Eigen::RowVectorXd &y) {
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
  return cod.pseudoInverse() * y.transpose(); // D x 1
}

// Per-path observation factors at one time point; empty Var means F has zero
// columns (Sigma = 0).
std::vector<Var> obs_factors(Tape &tape, const BoundDynamics &model, Var X, long n_paths,
                             const rng::NoiseStream &noise, std::uint64_t time_key) {
  const DynamicsConfig &cfg = *model.cfg;
  std::vector<Var> out(n_paths);
  if (cfg.variant == models::ModelVariant::DiffWGP) {
    Matrix nj = noise.normal(1, time_key, kTagObsJ, n_paths,
                             cfg.diffusion.rank * cfg.diffusion.dof);
    auto factors = sample_sqrt_sigma(tape, model.diffusion, X, nj);
    for (long r = 0; r < n_paths; ++r) out[r] = factors[r];
  } else if (cfg.variant == models::ModelVariant::DiffGP) {
    Var v = ad::clamp_nonneg(conditional(tape, model.flow_layer, X).var); // n x D
    Var eye = tape.constant(Matrix::Identity(cfg.latent_dim, cfg.latent_dim));
    for (long r = 0; r < n_paths; ++r) {
      Var sd = ad::sqrt(ad::transpose(ad::rows(v, r, 1))); // D x 1
      out[r] = ad::mul(ad::broadcast_cols(sd, cfg.latent_dim), eye);
    }
  }
  return out;
}

} // namespace

models::ElboBreakdown sequence_elbo(GraphContext &ctx, const DynamicsConfig &cfg,
                                    const SequenceBatch &batch, double c,
                                    const rng::NoiseStream &noise, double scale) {
  if (c < 0.0 || c > 1.0)
    throw DimensionError("sequence_elbo: anneal coefficient must be in [0, 1]");
  batch.validate(cfg.obs_dim);
  Tape &tape = ctx.tape();
  BoundDynamics model = bind_dynamics(ctx, cfg);
  sdeflow::FieldSampler field = latent_field(tape, model);

  const bool stochastic = cfg.variant != models::ModelVariant::NoNoise;
  const long n = stochastic ? cfg.mc_paths : 1;
  const long len = batch.times.size();
  const long D = cfg.latent_dim;

  Var X;
  std::string x0n = cfg.x0_name(batch.sequence_id);
  if (!cfg.identity_g && ctx.store().has(x0n)) {
    X = ad::broadcast_rows(ctx.param(x0n), n);
  } else if (cfg.identity_g) {
    Matrix x0 = latent_from_obs(ctx.store().at(cfg.a_name), batch.obs.row(0));
    X = tape.constant(Eigen::VectorXd::Ones(n) * x0.transpose());
  } else {
    throw DimensionError("sequence_elbo: no x0 parameter registered for sequence '" +
                         batch.sequence_id + "'");
  }

  Var total_ll;
  std::uint64_t substep = 0;
  for (long i = 0; i < len; ++i) {
    // Score y_i on every path; g is marginalized analytically, so its
    // conditional variance joins the diagonal of B.
    Var mean = X, gvar;
    if (!cfg.identity_g) {
      svgp::Marginal mg = conditional(tape, model.g_layer, X);
      mean = mg.mean;
      gvar = ad::clamp_nonneg(mg.var);
    }
    std::vector<Var> factors = obs_factors(tape, model, X, n, noise, static_cast<std::uint64_t>(i));
    Var y = tape.constant(Matrix(batch.obs.row(i).transpose()));
    Var Fempty = tape.constant(Matrix(D, 0));
    for (long r = 0; r < n; ++r) {
      Var lam = model.lambda_obs;
      if (gvar) lam = ad::add(lam, ad::transpose(ad::rows(gvar, r, 1)));
      Var gr = ad::transpose(ad::rows(mean, r, 1));
      Var F = factors[r] ? factors[r] : Fempty;
      Var ll = obs_loglik(tape, y, gr, F, model.A, lam);
      total_ll = total_ll.tape() ? ad::add(total_ll, ll) : ll;
    }

    if (i + 1 < len) {
      double span = batch.times(i + 1) - batch.times(i);
      long k = std::max<long>(1, static_cast<long>(std::ceil(span / cfg.max_step)));
      double dt = span / static_cast<double>(k);
      for (long s = 0; s < k; ++s, ++substep) {
        Matrix nj = field.noise_j_cols > 0
                        ? noise.normal(0, substep, kTagJ, n, field.noise_j_cols)
                        : Matrix(n, 0);
        Matrix nb = field.noise_b_cols > 0
                        ? noise.normal(0, substep, kTagB, n, field.noise_b_cols)
                        : Matrix(n, 0);
        try {
          X = sdeflow::em_step(tape, field, X, dt, nj, nb, static_cast<long>(substep));
        } catch (const DivergenceError &e) {
          double t_err = batch.times(i) + (s + 1) * dt;
          throw DivergenceError("sequence_elbo: divergence at t = " + std::to_string(t_err),
                                e.step_index);
        }
      }
    }
  }

  models::ElboBreakdown out;
  out.scale = scale;
  out.expected_loglik = ad::scale(total_ll, 1.0 / static_cast<double>(n));
  Var zero = tape.constant(Matrix::Zero(1, 1));
  out.kl_g = cfg.identity_g ? zero : kl_full(tape, model.g_layer);
  out.kl_f = cfg.zero_drift ? zero : kl_fixed_cov(tape, model.flow_layer);
  out.kl_sigma = cfg.variant == models::ModelVariant::DiffWGP
                     ? kl_full(tape, model.diffusion.j_layer)
                     : zero;
  out.total = ad::sub(ad::scale(out.expected_loglik, scale), out.kl_g);
  out.total = ad::sub(out.total, ad::scale(out.kl_f, c * c));
  out.total = ad::sub(out.total, ad::scale(out.kl_sigma, c));
  return out;
}

Forecast forecast(ParamStore &store, const DynamicsConfig &cfg, const SequenceBatch &context,
                  double horizon_hours, long n_sims, std::uint64_t seed, const Matrix *truth) {
  if (!(horizon_hours > 0.0)) throw DimensionError("forecast: horizon must be positive");
  if (n_sims < 1) throw DimensionError("forecast: n_sims must be positive");
  if (!cfg.identity_g)
    throw DimensionError("forecast: only the identity observation map is supported");
  context.validate(cfg.obs_dim);

  Tape tape;
  GraphContext ctx(tape, store);
  BoundDynamics model = bind_dynamics(ctx, cfg);
  sdeflow::FieldSampler field = latent_field(tape, model);

  const long H = static_cast<long>(std::ceil(horizon_hours));
  const long D = cfg.latent_dim;
  if (truth && (truth->rows() < H || truth->cols() != cfg.obs_dim))
    throw DimensionError("forecast: truth must cover the horizon");

  Matrix x0 = latent_from_obs(store.at(cfg.a_name), context.obs.row(context.obs.rows() - 1));
  Var X = tape.constant(Eigen::VectorXd::Ones(n_sims) * x0.transpose());

  rng::NoiseStream noise(seed);
  const long sub = std::max<long>(1, static_cast<long>(std::ceil(1.0 / cfg.max_step)));
  const double dt = 1.0 / static_cast<double>(sub);

  Forecast out;
  out.latent.assign(n_sims, Matrix(H, D));
  out.observed.assign(n_sims, Matrix(H, cfg.obs_dim));
  out.times.resize(H);
  if (truth) {
    out.loglik_mean.resize(H);
    out.loglik_se.resize(H);
  }

  std::uint64_t substep = 0;
  for (long h = 0; h < H; ++h) {
    for (long s = 0; s < sub; ++s, ++substep) {
      Matrix nj = field.noise_j_cols > 0 ? noise.normal(0, substep, kTagJ, n_sims, field.noise_j_cols)
                                         : Matrix(n_sims, 0);
      Matrix nb = field.noise_b_cols > 0 ? noise.normal(0, substep, kTagB, n_sims, field.noise_b_cols)
                                         : Matrix(n_sims, 0);
      X = sdeflow::em_step(tape, field, X, dt, nj, nb, static_cast<long>(substep));
    }
    out.times(h) = context.times(context.times.size() - 1) + h + 1;
    for (long r = 0; r < n_sims; ++r) {
      out.latent[r].row(h) = X.value().row(r);
      out.observed[r].row(h) = X.value().row(r); // identity g
    }
    if (truth) {
      std::vector<Var> factors =
          obs_factors(tape, model, X, n_sims, noise, 0x1000ULL + static_cast<std::uint64_t>(h));
      Var y = tape.constant(Matrix(truth->row(h).transpose()));
      Var Fempty = tape.constant(Matrix(D, 0));
      Eigen::VectorXd lls(n_sims);
      for (long r = 0; r < n_sims; ++r) {
        Var gr = ad::transpose(ad::rows(X, r, 1));
        Var F = factors[r] ? factors[r] : Fempty;
        lls(r) = obs_loglik(tape, y, gr, F, model.A, model.lambda_obs).scalar();
      }
      double m = lls.mean();
      out.loglik_mean(h) = m;
      double sd = n_sims > 1 ? std::sqrt((lls.array() - m).square().sum() / (n_sims - 1)) : 0.0;
      out.loglik_se(h) = sd / std::sqrt(static_cast<double>(n_sims));
    }
  }
  return out;
}

Histogram cross_correlation_density(const std::vector<Matrix> &observed, long dim_i, long dim_j,
                                    long bins) {
  if (observed.size() < 2)
    throw DimensionError("cross_correlation_density: need at least 2 simulations");
  if (bins < 1) throw DimensionError("cross_correlation_density: bins must be positive");

  double lo_i = 1e300, hi_i = -1e300, lo_j = 1e300, hi_j = -1e300;
  long total = 0;
  for (const Matrix &m : observed) {
    lo_i = std::min(lo_i, m.col(dim_i).minCoeff());
    hi_i = std::max(hi_i, m.col(dim_i).maxCoeff());
    lo_j = std::min(lo_j, m.col(dim_j).minCoeff());
    hi_j = std::max(hi_j, m.col(dim_j).maxCoeff());
    total += m.rows();
  }
  double wi = std::max(hi_i - lo_i, 1e-12), wj = std::max(hi_j - lo_j, 1e-12);

  Histogram h;
  h.centers_i.resize(bins);
  h.centers_j.resize(bins);
  for (long b = 0; b < bins; ++b) {
    h.centers_i(b) = lo_i + (b + 0.5) * wi / bins;
    h.centers_j(b) = lo_j + (b + 0.5) * wj / bins;
  }
  h.density = Matrix::Zero(bins, bins);
  for (const Matrix &m : observed)
    for (long r = 0; r < m.rows(); ++r) {
      long bi = std::min<long>(bins - 1, static_cast<long>((m(r, dim_i) - lo_i) / wi * bins));
      long bj = std::min<long>(bins - 1, static_cast<long>((m(r, dim_j) - lo_j) / wj * bins));
      h.density(bi, bj) += 1.0;
    }
  h.density /= static_cast<double>(total);
  return h;
}

} // namespace wishflow::dynamics
