#pragma once

#include <functional>
#include <vector>

#include "wishflow/autodiff.hpp"
#include "wishflow/errors.hpp"
#include "wishflow/rng.hpp"

namespace wishflow::sdeflow {

// Euler-Maruyama discretization of dx = mu(x) dt + sqrt(Sigma(x)) dB.
struct FlowConfig {
  double horizon_T = 1.0;
  long num_steps = 20;
  long mc_samples = 5;

  double dt() const {
    if (!(horizon_T > 0.0) || num_steps < 1)
      throw DimensionError("FlowConfig: horizon_T and num_steps must be positive");
    return horizon_T / static_cast<double>(num_steps);
  }
};

// Random field evaluated pointwise along the flow. Both coefficients see the
// same state within one step. Null callables mean the term is identically
// zero (baselines with no drift or no diffusion).
struct FieldSampler {
  long dim = 0;
  long noise_j_cols = 0; // reparameterization noise columns per point
  long noise_b_cols = 0; // Brownian driver columns per point
  std::function<ad::Var(ad::Tape &, ad::Var)> drift; // state -> n x D
  // Fused sqrt(Sigma(x)) applied to the Brownian block: unit-time increment.
  std::function<ad::Var(ad::Tape &, ad::Var, const ad::Matrix &, const ad::Matrix &)> diffusion;
};

// x + mu(x) dt + sqrt(dt) sqrt(Sigma(x)) n. Throws DivergenceError carrying
// step_index if the new state is non-finite.
ad::Var em_step(ad::Tape &tape, const FieldSampler &field, ad::Var x, double dt,
                const ad::Matrix &noise_j, const ad::Matrix &noise_b, long step_index);

// num_steps EM steps with fresh counter-based noise per (sample_index, step).
// When path is non-null every intermediate state (including x0 and x_T) is
// appended to it.
ad::Var integrate(ad::Tape &tape, const FieldSampler &field, ad::Var x0, const FlowConfig &cfg,
                  const rng::NoiseStream &noise, std::uint64_t sample_index,
                  std::vector<ad::Var> *path = nullptr);

// cfg.mc_samples independent terminal states from the same initial state.
std::vector<ad::Var> integrate_samples(ad::Tape &tape, const FieldSampler &field, ad::Var x0,
                                       const FlowConfig &cfg, const rng::NoiseStream &noise);

} // namespace wishflow::sdeflow
