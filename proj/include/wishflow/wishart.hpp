#pragma once

#include "wishflow/rng.hpp"
#include "wishflow/svgp.hpp"

namespace wishflow::wishart {

// Wishart-process diffusion: sqrt(Sigma(x)) = L J(x) with J the rank x dof
// matrix of GP values, plus an optional diagonal white-noise term Lambda.
// L has unit row norms by construction.
struct WishartConfig {
  std::string prefix;
  long dim = 0;  // D, ambient dimension
  long rank = 0; // rho
  long dof = 0;  // nu
  bool lambda_enabled = true;
  svgp::SvgpConfig j_layer; // rank*dof outputs over R^D; kernel and inducing
                            // inputs shared with the drift field

  std::string l_name() const { return prefix + ".L_raw"; }
  std::string lambda_name() const { return prefix + ".lambda_raw"; }
};

// Registers L_raw (iid standard normal) and lambda_raw (softplus^-1(1e-3)).
// The J layer is initialized separately via init_svgp, since it shares its
// kernel and inducing inputs with the drift layer.
void init_wishart(ParamStore &store, const WishartConfig &cfg, std::uint64_t seed);

// Freeze or unfreeze the white-noise diagonal (it can dominate and switch
// the Wishart part off).
void set_lambda_trainable(ParamStore &store, const WishartConfig &cfg, bool flag);

struct BoundWishart {
  const WishartConfig *cfg = nullptr;
  svgp::BoundSvgp j_layer;
  ad::Var L;      // D x rank, rows normalized to unit norm
  ad::Var lambda; // D x 1 positive; unbound when disabled
};

BoundWishart bind_wishart(GraphContext &ctx, const WishartConfig &cfg);

// Divide each row by its Euclidean norm; contract error naming the row on
// rows with norm below 1e-12.
ad::Var row_normalize(ad::Var l_raw);

// Reparameterized J draw at each row of X: n x (rank*dof), row-major per
// point (entry r*dof + v is J_{r,v}).
ad::Var sample_j(ad::Tape &tape, const BoundWishart &w, ad::Var X, const ad::Matrix &noise_j);

// Per-point square-root factors L J_i, each D x dof.
std::vector<ad::Var> sample_sqrt_sigma(ad::Tape &tape, const BoundWishart &w, ad::Var X,
                                       const ad::Matrix &noise_j);

// Diagonal of the white-noise term (D x 1); zero column when disabled.
ad::Var lambda_diag(ad::Tape &tape, const BoundWishart &w);

// Batched diffusion increment sqrt(Sigma(x_i)) n_i for all points at once:
// noise_j is n x (rank*dof), noise_b is n x dof (+ n x D extra columns for
// the white-noise part when lambda is enabled). Returns n x D.
ad::Var diffusion_term(ad::Tape &tape, const BoundWishart &w, ad::Var X,
                       const ad::Matrix &noise_j, const ad::Matrix &noise_b);

long brownian_cols(const WishartConfig &cfg); // dof (+ dim with lambda)

// Test-support operation: draws of R Sigma(x) R^T for a single input point.
// R must have full row rank.
std::vector<ad::Matrix> rank_projection_check(ParamStore &store, const WishartConfig &cfg,
                                              const Eigen::RowVectorXd &x, const ad::Matrix &R,
                                              long n_samples, const rng::NoiseStream &noise);

} // namespace wishflow::wishart
