#pragma once

#include "wishflow/params.hpp"

namespace wishflow::kernels {

// RBF with automatic relevance determination. Positivity of lengthscales and
// signal variance via softplus on the stored raw parameters.
struct RbfArdConfig {
  std::string prefix; // parameter namespace, e.g. "kern_f"
  long input_dim = 1;

  std::string ls_name() const { return prefix + ".raw_lengthscales"; }
  std::string var_name() const { return prefix + ".raw_variance"; }
};

void init_rbf_ard(ParamStore &store, const RbfArdConfig &cfg, double lengthscale,
                  double variance);

struct BoundKernel {
  ad::Var lengthscales; // d x 1, positive
  ad::Var variance;     // 1 x 1, positive
};

BoundKernel bind_kernel(GraphContext &ctx, const RbfArdConfig &cfg);

// Gram matrix k(X, Z), n x m. Differentiable w.r.t. X, Z and hyperparameters.
ad::Var gram(ad::Tape &tape, const BoundKernel &k, ad::Var X, ad::Var Z);

// k(x, x) = variance broadcast to an n x 1 column.
ad::Var prior_diag(ad::Tape &tape, const BoundKernel &k, long n);

// Scalar convenience evaluation outside any training graph.
double eval(const ParamStore &store, const RbfArdConfig &cfg,
            const Eigen::VectorXd &x, const Eigen::VectorXd &x2);

} // namespace wishflow::kernels
