#include "wishflow/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "wishflow/checkpoint.hpp"

namespace wishflow::train {

using ad::Matrix;
using ad::Tape;

void Schedule::validate() const {
  if (phase1_iters < 0 || total_iters < 1 || phase1_iters > total_iters)
    throw DimensionError("Schedule: need 0 <= phase1_iters <= total_iters");
  if (anneal_iters < 1) throw DimensionError("Schedule: anneal_iters must be positive");
  if (batch_size < 1) throw DimensionError("Schedule: batch_size must be positive");
  if (!(phase1_lr > 0.0) || !(phase2_lr > 0.0))
    throw DimensionError("Schedule: learning rates must be positive");
}

double anneal_coefficient(long iter_in_phase2, long anneal_iters) {
  if (iter_in_phase2 < 0) throw DimensionError("anneal_coefficient: negative iteration");
  return std::min(1.0, static_cast<double>(iter_in_phase2) / static_cast<double>(anneal_iters));
}

void adam_step(AdamState &st, ParamStore &params, const std::map<std::string, Matrix> &grads,
               double clip_norm) {
  double sq = 0.0;
  for (const auto &kv : grads) {
    if (!kv.second.allFinite())
      throw TrainingError("adam_step: non-finite gradient for parameter '" + kv.first + "'");
    sq += kv.second.squaredNorm();
  }
  double gscale = 1.0;
  if (clip_norm > 0.0 && std::sqrt(sq) > clip_norm) gscale = clip_norm / std::sqrt(sq);

  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (const auto &kv : grads) {
    Matrix &p = params.at(kv.first);
    if (p.rows() != kv.second.rows() || p.cols() != kv.second.cols())
      throw DimensionError("adam_step: gradient shape mismatch for '" + kv.first + "'");
    Matrix g = gscale * kv.second;
    Matrix &m = st.m[kv.first];
    Matrix &v = st.v[kv.first];
    if (m.size() == 0) m = Matrix::Zero(p.rows(), p.cols());
    if (v.size() == 0) v = Matrix::Zero(p.rows(), p.cols());
    m = st.beta1 * m + (1.0 - st.beta1) * g;
    v = st.beta2 * v + (1.0 - st.beta2) * g.cwiseProduct(g);
    p.array() -= st.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + st.eps);
  }
}

std::uint64_t fnv1a64(const std::string &s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::vector<long> minibatch(std::uint64_t seed, long iter, long n, long batch) {
  const long bpe = (n + batch - 1) / batch; // batches per epoch
  const long epoch = iter / bpe;
  const long pos = iter % bpe;
  std::vector<long> perm = rng::permutation(seed, static_cast<std::uint64_t>(epoch) + 1, n);
  long lo = pos * batch, hi = std::min(n, lo + batch);
  return {perm.begin() + lo, perm.begin() + hi};
}

} // namespace

FitResult fit(ParamStore &store, long num_points, const std::set<std::string> &phase1_params,
              const ElboFn &elbo_fn, const Schedule &sched, std::uint64_t seed,
              const FitOptions &opts) {
  sched.validate();
  if (num_points < 1) throw DimensionError("fit: empty dataset");
  const long batch = std::min(sched.batch_size, num_points);

  AdamState adam;
  adam.beta1 = sched.beta1;
  long start_iter = 0;
  if (!opts.resume_from.empty())
    start_iter = checkpoint::load(opts.resume_from, store, &adam).iter;

  std::ofstream metrics;
  if (!opts.metrics_path.empty()) {
    metrics.open(opts.metrics_path, start_iter > 0 ? std::ios::app : std::ios::out);
    if (!metrics) throw ParseError("fit: cannot write " + opts.metrics_path);
    if (start_iter == 0) {
      metrics << "# config_hash " << std::hex << fnv1a64(opts.config_snapshot) << std::dec << "\n";
      metrics << "iteration,elbo,expected_loglik,kl_g,kl_f,kl_sigma,wall_ms\n";
    }
  }

  FitResult result;
  long bad_streak = 0;
  for (long i = start_iter; i < sched.total_iters; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    const bool phase1 = i < sched.phase1_iters;
    adam.lr = phase1 ? sched.phase1_lr : sched.phase2_lr;
    const double c = phase1 ? 0.0 : anneal_coefficient(i - sched.phase1_iters, sched.anneal_iters);

    Tape tape;
    GraphContext ctx(tape, store);
    models::ElboBreakdown eb =
        elbo_fn(ctx, minibatch(seed, i, num_points, batch), c, static_cast<std::uint64_t>(i));
    const double total = eb.total.scalar();
    if (!std::isfinite(total)) {
      if (++bad_streak >= 10)
        throw TrainingError("fit: non-finite ELBO for 10 consecutive iterations (last iter " +
                            std::to_string(i) + ", loglik " +
                            std::to_string(eb.expected_loglik.scalar()) + ", kl_g " +
                            std::to_string(eb.kl_g.scalar()) + ", kl_f " +
                            std::to_string(eb.kl_f.scalar()) + ", kl_sigma " +
                            std::to_string(eb.kl_sigma.scalar()) + ")");
    } else {
      bad_streak = 0;
      tape.backward(eb.total);
      std::map<std::string, Matrix> grads;
      for (const auto &kv : store.values()) {
        const std::string &name = kv.first;
        if (!store.trainable(name)) continue;
        if (phase1 && phase1_params.count(name) == 0) continue;
        if (!sched.train_inducing && name.size() > 2 &&
            name.compare(name.size() - 2, 2, ".Z") == 0)
          continue;
        grads[name] = -ctx.grad(name); // ascent on the ELBO
      }
      adam_step(adam, store, grads, sched.clip_norm);
    }

    result.final_elbo = total;
    if (i % sched.log_every == 0 || i + 1 == sched.total_iters) {
      double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
      MetricRow row{i,
                    total,
                    eb.expected_loglik.scalar(),
                    eb.kl_g.scalar(),
                    eb.kl_f.scalar(),
                    eb.kl_sigma.scalar(),
                    ms};
      result.log.push_back(row);
      if (metrics.is_open())
        metrics << row.iteration << ',' << std::setprecision(17) << row.elbo << ','
                << row.expected_loglik << ',' << row.kl_g << ',' << row.kl_f << ','
                << row.kl_sigma << ',' << row.wall_ms << "\n";
    }

    if (!opts.checkpoint_dir.empty() && i + 1 == sched.phase1_iters &&
        sched.phase1_iters < sched.total_iters)
      checkpoint::save(opts.checkpoint_dir + "/phase1", store, &adam, i + 1,
                       opts.config_snapshot);
  }
  if (!opts.checkpoint_dir.empty())
    checkpoint::save(opts.checkpoint_dir + "/final", store, &adam, sched.total_iters,
                     opts.config_snapshot);
  result.iterations = sched.total_iters;
  return result;
}

FitResult fit_regression(ParamStore &store, const models::RegressionConfig &cfg, const Matrix &X,
                         const Matrix &y, const Schedule &sched, std::uint64_t seed,
                         const FitOptions &opts) {
  if (X.rows() != y.rows()) throw DimensionError("fit_regression: X/y row mismatch");
  std::set<std::string> phase1;
  for (const auto &kv : store.values()) {
    const std::string &n = kv.first;
    if (n.rfind(cfg.g_layer.prefix + ".", 0) == 0 ||
        n.rfind(cfg.g_layer.kernel.prefix + ".", 0) == 0 || n == cfg.noise_name)
      phase1.insert(n);
  }
  const long N = X.rows();
  ElboFn fn = [&store, &cfg, &X, &y, N](GraphContext &ctx, const std::vector<long> &batch,
                                        double c, std::uint64_t iter) {
    (void)store;
    Matrix xb(static_cast<long>(batch.size()), X.cols());
    Matrix yb(static_cast<long>(batch.size()), y.cols());
    for (std::size_t k = 0; k < batch.size(); ++k) {
      xb.row(static_cast<long>(k)) = X.row(batch[k]);
      yb.row(static_cast<long>(k)) = y.row(batch[k]);
    }
    rng::NoiseStream noise(rng::mix(0x747261696eULL, iter));
    double scale = static_cast<double>(N) / static_cast<double>(batch.size());
    return elbo(ctx, cfg, xb, yb, c, noise, scale);
  };
  return fit(store, N, phase1, fn, sched, seed, opts);
}

FitResult fit_dynamics(ParamStore &store, const dynamics::DynamicsConfig &cfg,
                       const data::TimeSeriesDataset &series, long window_len,
                       const Schedule &sched, std::uint64_t seed, const FitOptions &opts) {
  if (window_len < 2 || window_len > series.Y.rows())
    throw DimensionError("fit_dynamics: bad window length");
  const long n_windows = series.Y.rows() / window_len;
  std::set<std::string> phase1;
  for (const auto &kv : store.values()) {
    const std::string &n = kv.first;
    if (n.rfind("obs.", 0) == 0 || n.rfind(cfg.g_layer.prefix + ".", 0) == 0) phase1.insert(n);
  }
  // One window per iteration keeps the KL terms counted exactly once.
  Schedule s1 = sched;
  s1.batch_size = 1;
  ElboFn fn = [&cfg, &series, window_len, n_windows](GraphContext &ctx,
                                                     const std::vector<long> &batch, double c,
                                                     std::uint64_t iter) {
    long w = batch.front();
    dynamics::SequenceBatch sb;
    sb.times = series.times.segment(w * window_len, window_len);
    sb.obs = series.Y.middleRows(w * window_len, window_len);
    rng::NoiseStream noise(rng::mix(0x64796e66ULL, iter));
    return sequence_elbo(ctx, cfg, sb, c, noise, static_cast<double>(n_windows));
  };
  return fit(store, n_windows, phase1, fn, s1, seed, opts);
}

} // namespace wishflow::train
