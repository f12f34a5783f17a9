#include "wishflow/sdeflow.hpp"

#include <cmath>
#include <string>

namespace wishflow::sdeflow {

using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {
// Role tags for the counter-based noise substreams.
constexpr std::uint64_t kTagJ = 0x666c6f4aULL;
constexpr std::uint64_t kTagB = 0x666c6f42ULL;
} // namespace

Var em_step(Tape &tape, const FieldSampler &field, Var x, double dt, const Matrix &noise_j,
            const Matrix &noise_b, long step_index) {
  if (dt <= 0.0) throw DimensionError("em_step: dt must be positive");
  if (x.cols() != field.dim) throw DimensionError("em_step: state dimension mismatch");

  Var out = x;
  if (field.drift) out = ad::add(out, ad::scale(field.drift(tape, x), dt));
  if (field.diffusion)
    out = ad::add(out, ad::scale(field.diffusion(tape, x, noise_j, noise_b), std::sqrt(dt)));

  if (!out.value().allFinite())
    throw DivergenceError("em_step: non-finite state at step " + std::to_string(step_index),
                          step_index);
  return out;
}

Var integrate(Tape &tape, const FieldSampler &field, Var x0, const FlowConfig &cfg,
              const rng::NoiseStream &noise, std::uint64_t sample_index,
              std::vector<Var> *path) {
  if (!x0.value().allFinite()) throw DivergenceError("integrate: non-finite initial state", -1);
  const double dt = cfg.dt();
  const long n = x0.rows();
  Var x = x0;
  if (path) path->push_back(x);
  for (long s = 0; s < cfg.num_steps; ++s) {
    Matrix nj = field.noise_j_cols > 0
                    ? noise.normal(sample_index, static_cast<std::uint64_t>(s), kTagJ, n,
                                   field.noise_j_cols)
                    : Matrix(n, 0);
    Matrix nb = field.noise_b_cols > 0
                    ? noise.normal(sample_index, static_cast<std::uint64_t>(s), kTagB, n,
                                   field.noise_b_cols)
                    : Matrix(n, 0);
    x = em_step(tape, field, x, dt, nj, nb, s);
    if (path) path->push_back(x);
  }
  return x;
}

std::vector<Var> integrate_samples(Tape &tape, const FieldSampler &field, Var x0,
                                   const FlowConfig &cfg, const rng::NoiseStream &noise) {
  std::vector<Var> out;
  out.reserve(cfg.mc_samples);
  for (long s = 0; s < cfg.mc_samples; ++s)
    out.push_back(integrate(tape, field, x0, cfg, noise, static_cast<std::uint64_t>(s)));
  return out;
}

} // namespace wishflow::sdeflow
