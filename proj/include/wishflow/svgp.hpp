#pragma once

#include <vector>

#include "wishflow/kernel.hpp"

namespace wishflow::svgp {

// Sparse variational GP layer with P independent outputs sharing one kernel
// and one set of inducing inputs (Kronecker structure: all outputs share the
// interpolation weights alpha).
struct SvgpConfig {
  std::string prefix;
  long num_inducing = 0;  // M
  long input_dim = 0;     // d_in
  long num_outputs = 1;   // P
  // When set, q(u) covariance is frozen to the prior k(Z,Z): no S parameters,
  // KL reduces to the quadratic form in m.
  bool fixed_prior_covariance = false;
  kernels::RbfArdConfig kernel;
  // Z parameter name; layers that share inducing inputs point at one name.
  std::string inducing_name;

  std::string z_name() const { return inducing_name.empty() ? prefix + ".Z" : inducing_name; }
  std::string m_name() const { return prefix + ".m"; }
  std::string s_name(long p) const { return prefix + ".Schol" + std::to_string(p); }
};

// Registers m (zero) and, unless the covariance is fixed, S_chol_p = chol(K)
// so q starts at the prior with every KL exactly zero. Z is registered only
// if the configured name is not already present (shared layers).
void init_svgp(ParamStore &store, const SvgpConfig &cfg, const ad::Matrix &inducing);

struct BoundSvgp {
  const SvgpConfig *cfg = nullptr;
  kernels::BoundKernel kern;
  ad::Var Z, m;
  std::vector<ad::Var> s_chol; // lower-triangular factors, one per output
  ad::Var K;  // gram(Z, Z)
  ad::Var Lk; // cholesky(K)
};

BoundSvgp bind_svgp(GraphContext &ctx, const SvgpConfig &cfg);

// Variational marginals q(f(x_i)) per point and output.
struct Marginal {
  ad::Var mean; // n x P
  ad::Var var;  // n x P, conditional variances
};

// mean = alpha^T m, var = k(x,x) + alpha^T (S - K) alpha per output.
Marginal conditional(ad::Tape &tape, const BoundSvgp &layer, ad::Var X);

// Sum over outputs of KL(N(m_p, S_p) || N(0, K)).
ad::Var kl_full(ad::Tape &tape, const BoundSvgp &layer);

// 1/2 sum_p m_p^T K^-1 m_p; valid when q covariance equals the prior.
ad::Var kl_fixed_cov(ad::Tape &tape, const BoundSvgp &layer);

// Reparameterized draw: mean + sqrt(var) * noise, noise ~ N(0, I) of shape n x P.
ad::Var sample_marginal(ad::Tape &tape, const Marginal &mg, const ad::Matrix &noise);

// Lloyd's k-means on the rows of X; deterministic per seed. Used to place
// inducing inputs.
ad::Matrix kmeans_centroids(const ad::Matrix &X, long k, std::uint64_t seed);

} // namespace wishflow::svgp
