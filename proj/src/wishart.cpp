#include "wishflow/wishart.hpp"

#include <Eigen/LU>

namespace wishflow::wishart {

using ad::Matrix;
using ad::Tape;
using ad::Var;

void init_wishart(ParamStore &store, const WishartConfig &cfg, std::uint64_t seed) {
  if (cfg.rank < 1 || cfg.dof < 1 || cfg.dim < 1)
    throw DimensionError("init_wishart: dim, rank and dof must be positive");
  if (cfg.j_layer.num_outputs != cfg.rank * cfg.dof)
    throw DimensionError("init_wishart: J layer must have rank*dof outputs");
  rng::NoiseStream ns(seed);
  store.add(cfg.l_name(), ns.normal(0, 0, 0x4c726177ULL, cfg.dim, cfg.rank));
  store.add(cfg.lambda_name(),
            Matrix::Constant(cfg.dim, 1, ad::softplus_inv(1e-3)));
}

void set_lambda_trainable(ParamStore &store, const WishartConfig &cfg, bool flag) {
  store.set_trainable(cfg.lambda_name(), flag);
}

Var row_normalize(Var l_raw) {
  const long cols = l_raw.cols();
  // l_raw.value() is a reference into the tape, invalidated once new nodes
  // are pushed below; inspect it before building the graph.
  for (long i = 0; i < l_raw.rows(); ++i)
    if (l_raw.value().row(i).norm() < 1e-12)
      throw DimensionError("row_normalize: zero row at index " + std::to_string(i));
  Var norms = ad::sqrt(ad::rowsum(ad::square(l_raw))); // D x 1
  return ad::div(l_raw, ad::broadcast_cols(norms, cols));
}

BoundWishart bind_wishart(GraphContext &ctx, const WishartConfig &cfg) {
  BoundWishart w;
  w.cfg = &cfg;
  w.j_layer = bind_svgp(ctx, cfg.j_layer);
  w.L = row_normalize(ctx.param(cfg.l_name()));
  if (cfg.lambda_enabled) w.lambda = ad::softplus(ctx.param(cfg.lambda_name()));
  return w;
}

Var sample_j(Tape &tape, const BoundWishart &w, Var X, const Matrix &noise_j) {
  svgp::Marginal mg = conditional(tape, w.j_layer, X);
  return sample_marginal(tape, mg, noise_j);
}

std::vector<Var> sample_sqrt_sigma(Tape &tape, const BoundWishart &w, Var X,
                                   const Matrix &noise_j) {
  const long rho = w.cfg->rank, nu = w.cfg->dof;
  Var js = sample_j(tape, w, X, noise_j);
  std::vector<Var> out;
  out.reserve(X.rows());
  for (long i = 0; i < X.rows(); ++i) {
    Var ji = ad::reshape(ad::rows(js, i, 1), rho, nu);
    out.push_back(ad::matmul(w.L, ji));
  }
  return out;
}

Var lambda_diag(Tape &tape, const BoundWishart &w) {
  if (w.cfg->lambda_enabled) return w.lambda;
  return tape.constant(Matrix::Zero(w.cfg->dim, 1));
}

long brownian_cols(const WishartConfig &cfg) {
  return cfg.dof + (cfg.lambda_enabled ? cfg.dim : 0);
}

Var diffusion_term(Tape &tape, const BoundWishart &w, Var X, const Matrix &noise_j,
                   const Matrix &noise_b) {
  const long n = X.rows();
  const long rho = w.cfg->rank, nu = w.cfg->dof, D = w.cfg->dim;
  if (noise_b.rows() != n || noise_b.cols() != brownian_cols(*w.cfg))
    throw DimensionError("diffusion_term: brownian noise shape mismatch");

  Var js = sample_j(tape, w, X, noise_j); // n x (rho*nu)

  // (L J_i) n_i for all points at once: tile the nu-column Brownian block
  // rho times to align with the row-major (r, v) layout of js, multiply
  // elementwise, then block-sum each r group.
  Var nb = tape.constant(Matrix(noise_b.leftCols(nu)));
  Var tiled = nb;
  for (long r = 1; r < rho; ++r) tiled = ad::hcat(tiled, nb);
  Matrix rsum = Matrix::Zero(rho * nu, rho);
  for (long r = 0; r < rho; ++r)
    for (long v = 0; v < nu; ++v) rsum(r * nu + v, r) = 1.0;
  Var g = ad::matmul(ad::mul(js, tiled), tape.constant(rsum)); // n x rho
  Var term = ad::matmul(g, ad::transpose(w.L));                // n x D

  if (w.cfg->lambda_enabled) {
    Var sd_row = ad::transpose(ad::sqrt(w.lambda)); // 1 x D
    Var white = ad::mul(ad::broadcast_rows(sd_row, n),
                        tape.constant(Matrix(noise_b.rightCols(D))));
    term = ad::add(term, white);
  }
  return term;
}

std::vector<Matrix> rank_projection_check(ParamStore &store, const WishartConfig &cfg,
                                          const Eigen::RowVectorXd &x, const Matrix &R,
                                          long n_samples, const rng::NoiseStream &noise) {
  if (R.cols() != cfg.dim) throw DimensionError("rank_projection_check: R must have D columns");
  Eigen::FullPivLU<Matrix> lu(R);
  if (lu.rank() < R.rows())
    throw DimensionError("rank_projection_check: R must have full row rank");

  Tape tape;
  GraphContext ctx(tape, store);
  BoundWishart w = bind_wishart(ctx, cfg);
  Var X = tape.constant(Matrix(x));
  Matrix lam = Matrix::Zero(cfg.dim, cfg.dim);
  if (cfg.lambda_enabled) lam.diagonal() = lambda_diag(tape, w).value().col(0);

  std::vector<Matrix> out;
  out.reserve(n_samples);
  for (long s = 0; s < n_samples; ++s) {
    Matrix nj = noise.normal(s, 0, 0x70726f6aULL, 1, cfg.rank * cfg.dof);
    Matrix f = sample_sqrt_sigma(tape, w, X, nj)[0].value(); // D x nu
    Matrix sigma = f * f.transpose() + lam;
    out.push_back(R * sigma * R.transpose());
  }
  return out;
}

} // namespace wishflow::wishart
