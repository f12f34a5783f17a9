#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "wishflow/errors.hpp"

namespace wishflow::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

// Handle to a node on a tape. Cheap to copy; lifetime bound to the tape.
class Var {
public:
  Var() = default;
  const Matrix &value() const;
  long rows() const;
  long cols() const;
  double scalar() const; // value()(0,0); contract error if not 1x1
  bool requires_grad() const;
  int index() const { return idx_; }
  Tape *tape() const { return tape_; }
  explicit operator bool() const { return tape_ != nullptr; }

private:
  friend class Tape;
  Var(Tape *t, int i) : tape_(t), idx_(i) {}
  Tape *tape_ = nullptr;
  int idx_ = -1;
};

// Records primitive operations in topological order; backward visits each
// node exactly once in reverse. Single-threaded per tape.
class Tape {
public:
  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var constant(Matrix v);
  Var constant(double v);
  Var leaf(const Matrix &v); // trainable leaf (requires_grad)

  const Matrix &value(Var v) const;
  // Gradient of the last backward() loss w.r.t. v; zeros if untouched.
  Matrix grad(Var v) const;

  // Reverse pass from a scalar loss. May be called repeatedly; each call
  // recomputes gradients from zero (deterministic, bitwise-repeatable).
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::function<void(Tape &)> back; // empty for leaves/constants
  };

  Node &node(int i) { return nodes_[i]; }
  const Node &node(int i) const { return nodes_[i]; }

  Var push(Matrix v, bool requires_grad, std::function<void(Tape &)> back);
  // Accumulate g into node idx's gradient (no-op unless it requires grad).
  void accum(int idx, const Matrix &g);

private:
  std::vector<Node> nodes_;
};

// ---- primitives ------------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b); // same shape
Var sub(Var a, Var b);
Var neg(Var a);
Var mul(Var a, Var b); // elementwise
Var div(Var a, Var b); // elementwise
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var softplus(Var a);

Var sum(Var a);  // 1x1
Var mean(Var a); // 1x1
Var rowsum(Var a); // n x 1
Var colsum(Var a); // 1 x m

Var transpose(Var a);
Var tril(Var a);
Var diag_part(Var a);                     // n x n -> n x 1
Var broadcast_cols(Var a, long ncols);    // n x 1 -> n x ncols
Var broadcast_rows(Var a, long nrows);    // 1 x m -> nrows x m
Var rows(Var a, long start, long count);
Var cols(Var a, long start, long count);
Var vcat(Var a, Var b);
Var hcat(Var a, Var b);
Var reshape(Var a, long r, long c); // row-major entry order

// Clamp values in [-tol, 0] to 0; throw NumericalError below -tol.
Var clamp_nonneg(Var a, double tol = 1e-12);

// Cholesky of a + jitter*I. Jitter starts at 1e-6 * mean(diag) and
// escalates tenfold up to 1e-2 * mean(diag) before failing with the
// offending pivot index. Differentiable (Murray's symmetric rule).
Var cholesky(Var a);
// First jitter value cholesky() will try for this matrix.
double cholesky_jitter(const Matrix &a);
// Cholesky with no jitter at all; NumericalError on a non-positive pivot.
// For matrices that are positive definite by construction (e.g. I + U^T U).
Var cholesky_exact(Var a);

Var solve_lower(Var l, Var b);   // l^-1 b
Var solve_lower_t(Var l, Var b); // l^-T b

// 2 * sum(log(diag(l))) for a Cholesky factor l.
Var logdet_from_chol(Var l);

// ---- plain-double helpers --------------------------------------------------

double softplus_val(double x);
double softplus_inv(double y); // y > 0

} // namespace wishflow::ad
