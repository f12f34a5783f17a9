#include "wishflow/svgp.hpp"

#include "wishflow/rng.hpp"

namespace wishflow::svgp {

using ad::Matrix;
using ad::Tape;
using ad::Var;

void init_svgp(ParamStore &store, const SvgpConfig &cfg, const Matrix &inducing) {
  if (inducing.rows() != cfg.num_inducing || inducing.cols() != cfg.input_dim)
    throw DimensionError("init_svgp: inducing input shape mismatch for " + cfg.prefix);
  if (!store.has(cfg.z_name())) store.add(cfg.z_name(), inducing);
  store.add(cfg.m_name(), Matrix::Zero(cfg.num_inducing, cfg.num_outputs));
  if (!cfg.fixed_prior_covariance) {
    // chol(K(Z,Z)) so S = K at start and kl_full is exactly zero.
    Tape t;
    ParamStore &s = store;
    GraphContext ctx(t, s);
    kernels::BoundKernel k = bind_kernel(ctx, cfg.kernel);
    Var zv = t.constant(store.at(cfg.z_name()));
    Matrix lk = ad::cholesky(kernels::gram(t, k, zv, zv)).value();
    for (long p = 0; p < cfg.num_outputs; ++p) store.add(cfg.s_name(p), lk);
  }
}

BoundSvgp bind_svgp(GraphContext &ctx, const SvgpConfig &cfg) {
  BoundSvgp layer;
  layer.cfg = &cfg;
  layer.kern = bind_kernel(ctx, cfg.kernel);
  layer.Z = ctx.param(cfg.z_name());
  layer.m = ctx.param(cfg.m_name());
  if (!cfg.fixed_prior_covariance) {
    layer.s_chol.reserve(cfg.num_outputs);
    for (long p = 0; p < cfg.num_outputs; ++p)
      layer.s_chol.push_back(ad::tril(ctx.param(cfg.s_name(p))));
  }
  layer.K = kernels::gram(ctx.tape(), layer.kern, layer.Z, layer.Z);
  layer.Lk = ad::cholesky(layer.K);
  return layer;
}

Marginal conditional(Tape &tape, const BoundSvgp &layer, Var X) {
  const SvgpConfig &cfg = *layer.cfg;
  if (X.cols() != cfg.input_dim)
    throw DimensionError("conditional: input dimension mismatch for " + cfg.prefix);
  const long n = X.rows();
  const long P = cfg.num_outputs;

  Var kzx = kernels::gram(tape, layer.kern, layer.Z, X); // M x n
  Var a = ad::solve_lower(layer.Lk, kzx);                // Lk^-1 Kzx
  Var alpha = ad::solve_lower_t(layer.Lk, a);            // K^-1 Kzx

  Marginal out;
  out.mean = ad::matmul(ad::transpose(alpha), layer.m); // n x P

  Var prior = kernels::prior_diag(tape, layer.kern, n);      // n x 1, k(x,x)
  Var nystrom = ad::transpose(ad::colsum(ad::square(a)));    // n x 1, alpha^T K alpha
  if (cfg.fixed_prior_covariance) {
    // S = K: the correction cancels and the marginal variance is the prior's.
    out.var = ad::broadcast_cols(prior, P);
    return out;
  }
  Var base = ad::sub(prior, nystrom);
  Var var;
  for (long p = 0; p < P; ++p) {
    Var ca = ad::matmul(ad::transpose(layer.s_chol[p]), alpha); // M x n
    Var sq = ad::transpose(ad::colsum(ad::square(ca)));         // alpha^T S_p alpha
    Var vp = ad::add(base, sq);
    var = (p == 0) ? vp : ad::hcat(var, vp);
  }
  out.var = var;
  return out;
}

Var kl_full(Tape &tape, const BoundSvgp &layer) {
  const SvgpConfig &cfg = *layer.cfg;
  if (cfg.fixed_prior_covariance)
    throw DimensionError("kl_full: layer has fixed prior covariance, use kl_fixed_cov");
  const double M = static_cast<double>(cfg.num_inducing);
  Var logdet_k = ad::logdet_from_chol(layer.Lk);
  Var total = tape.constant(0.0);
  for (long p = 0; p < cfg.num_outputs; ++p) {
    Var c = layer.s_chol[p];
    Var a = ad::solve_lower(layer.Lk, c);
    Var trace = ad::sum(ad::square(a)); // tr(K^-1 S_p)
    Var w = ad::solve_lower(layer.Lk, ad::cols(layer.m, p, 1));
    Var quad = ad::sum(ad::square(w)); // m_p^T K^-1 m_p
    Var logdet_s = ad::sum(ad::log(ad::square(ad::diag_part(c))));
    Var kl = ad::scale(ad::add_scalar(ad::add(ad::add(trace, quad), ad::sub(logdet_k, logdet_s)), -M),
                       0.5);
    total = ad::add(total, kl);
  }
  return total;
}

Var kl_fixed_cov(Tape &tape, const BoundSvgp &layer) {
  (void)tape;
  Var w = ad::solve_lower(layer.Lk, layer.m);
  return ad::scale(ad::sum(ad::square(w)), 0.5);
}

Var sample_marginal(Tape &tape, const Marginal &mg, const Matrix &noise) {
  if (noise.rows() != mg.mean.rows() || noise.cols() != mg.mean.cols())
    throw DimensionError("sample_marginal: noise shape mismatch");
  Var sd = ad::sqrt(ad::clamp_nonneg(mg.var));
  return ad::add(mg.mean, ad::mul(sd, tape.constant(noise)));
}

Matrix kmeans_centroids(const Matrix &X, long k, std::uint64_t seed) {
  const long n = X.rows();
  if (k >= n) return X;
  std::vector<long> perm = rng::permutation(seed, 0x6b6d65616e73ULL, n);
  Matrix centers(k, X.cols());
  for (long i = 0; i < k; ++i) centers.row(i) = X.row(perm[i]);
  std::vector<long> assign(n, 0);
  for (int iter = 0; iter < 25; ++iter) {
    bool changed = false;
    for (long i = 0; i < n; ++i) {
      long best = 0;
      double bestd = (X.row(i) - centers.row(0)).squaredNorm();
      for (long c = 1; c < k; ++c) {
        double d = (X.row(i) - centers.row(c)).squaredNorm();
        if (d < bestd) {
          bestd = d;
          best = c;
        }
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
    }
    if (!changed && iter > 0) break;
    Matrix sums = Matrix::Zero(k, X.cols());
    std::vector<long> counts(k, 0);
    for (long i = 0; i < n; ++i) {
      sums.row(assign[i]) += X.row(i);
      counts[assign[i]]++;
    }
    for (long c = 0; c < k; ++c)
      if (counts[c] > 0) centers.row(c) = sums.row(c) / static_cast<double>(counts[c]);
  }
  return centers;
}

} // namespace wishflow::svgp
