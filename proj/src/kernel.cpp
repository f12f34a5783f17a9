#include "wishflow/kernel.hpp"

namespace wishflow::kernels {

using ad::Matrix;
using ad::Var;

void init_rbf_ard(ParamStore &store, const RbfArdConfig &cfg, double lengthscale,
                  double variance) {
  Matrix ls(cfg.input_dim, 1);
  ls.setConstant(ad::softplus_inv(lengthscale));
  store.add(cfg.ls_name(), ls);
  Matrix v(1, 1);
  v(0, 0) = ad::softplus_inv(variance);
  store.add(cfg.var_name(), v);
}

BoundKernel bind_kernel(GraphContext &ctx, const RbfArdConfig &cfg) {
  BoundKernel k;
  k.lengthscales = ad::softplus(ctx.param(cfg.ls_name()));
  k.variance = ad::softplus(ctx.param(cfg.var_name()));
  return k;
}

Var gram(ad::Tape &tape, const BoundKernel &k, Var X, Var Z) {
  if (X.cols() != k.lengthscales.rows() || Z.cols() != k.lengthscales.rows())
    throw DimensionError("gram: input dimension does not match kernel lengthscales");
  const long n = X.rows(), m = Z.rows(), d = X.cols();

  Var inv_ls_row = ad::transpose(ad::div(tape.constant(Matrix::Ones(d, 1)), k.lengthscales));
  Var Xs = ad::mul(X, ad::broadcast_rows(inv_ls_row, n));
  Var Zs = ad::mul(Z, ad::broadcast_rows(inv_ls_row, m));

  Var sx = ad::rowsum(ad::square(Xs)); // n x 1
  Var sz = ad::rowsum(ad::square(Zs)); // m x 1
  Var cross = ad::matmul(Xs, ad::transpose(Zs));
  Var d2 = ad::sub(ad::add(ad::broadcast_cols(sx, m), ad::broadcast_rows(ad::transpose(sz), n)),
                   ad::scale(cross, 2.0));
  // Rounding can push zero distances marginally negative.
  d2 = ad::clamp_nonneg(d2, 1e-9);

  Var e = ad::exp(ad::scale(d2, -0.5));
  Var var_row = ad::broadcast_cols(k.variance, m); // 1 x m
  return ad::mul(e, ad::broadcast_rows(var_row, n));
}

Var prior_diag(ad::Tape &tape, const BoundKernel &k, long n) {
  (void)tape;
  return ad::broadcast_rows(ad::broadcast_cols(k.variance, 1), n);
}

double eval(const ParamStore &store, const RbfArdConfig &cfg, const Eigen::VectorXd &x,
            const Eigen::VectorXd &x2) {
  if (x.size() != cfg.input_dim || x2.size() != cfg.input_dim)
    throw DimensionError("kernel eval: dimension mismatch");
  ad::Tape t;
  ParamStore &s = const_cast<ParamStore &>(store);
  GraphContext ctx(t, s);
  BoundKernel k = bind_kernel(ctx, cfg);
  Var xv = t.constant(Matrix(x.transpose()));
  Var zv = t.constant(Matrix(x2.transpose()));
  return gram(t, k, xv, zv).value()(0, 0);
}

} // namespace wishflow::kernels
