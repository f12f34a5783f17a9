#include "wishflow/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace wishflow::ad {

namespace {

void check(bool cond, const std::string &msg) {
  if (!cond) throw DimensionError(msg);
}

std::string shape_str(const Matrix &m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

// Unblocked Cholesky; returns the failing pivot index or -1 on success.
long cholesky_inplace(Matrix &a) {
  const long n = a.rows();
  for (long j = 0; j < n; ++j) {
    double d = a(j, j);
    for (long k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0)) return j;
    d = std::sqrt(d);
    a(j, j) = d;
    for (long i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (long k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / d;
    }
  }
  a.triangularView<Eigen::StrictlyUpper>().setZero();
  return -1;
}

} // namespace

// ---- Var -------------------------------------------------------------------

const Matrix &Var::value() const { return tape_->node(idx_).value; }
long Var::rows() const { return value().rows(); }
long Var::cols() const { return value().cols(); }
bool Var::requires_grad() const { return tape_->node(idx_).requires_grad; }

double Var::scalar() const {
  check(rows() == 1 && cols() == 1, "scalar() on non-1x1 tensor " + shape_str(value()));
  return value()(0, 0);
}

// ---- Tape ------------------------------------------------------------------

Var Tape::push(Matrix v, bool requires_grad, std::function<void(Tape &)> back) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Matrix v) { return push(std::move(v), false, nullptr); }

Var Tape::constant(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return push(std::move(m), false, nullptr);
}

Var Tape::leaf(const Matrix &v) { return push(v, true, nullptr); }

const Matrix &Tape::value(Var v) const { return nodes_[v.index()].value; }

Matrix Tape::grad(Var v) const {
  const Node &n = nodes_[v.index()];
  if (n.grad_alloc) return n.grad;
  return Matrix::Zero(n.value.rows(), n.value.cols());
}

void Tape::accum(int idx, const Matrix &g) {
  Node &n = nodes_[idx];
  if (!n.requires_grad) return;
  if (!n.grad_alloc) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.grad_alloc = true;
  }
  n.grad += g;
}

void Tape::backward(Var loss) {
  check(loss.tape() == this, "backward: loss from a different tape");
  check(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be scalar");
  if (!nodes_[loss.index()].requires_grad)
    throw DimensionError("backward: loss does not depend on any trainable leaf");
  for (Node &n : nodes_) {
    n.grad_alloc = false;
    n.grad.resize(0, 0);
  }
  accum(loss.index(), Matrix::Ones(1, 1));
  for (int i = loss.index(); i >= 0; --i) {
    Node &n = nodes_[i];
    if (n.requires_grad && n.grad_alloc && n.back) n.back(*this);
  }
}

// ---- primitives ------------------------------------------------------------

namespace {

bool any_grad(std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (v.requires_grad()) return true;
  return false;
}

void check_same_tape(Var a, Var b) {
  check(a.tape() == b.tape(), "operands on different tapes");
}

} // namespace

static Var make_node(Tape &t, Matrix out, bool req,
                     std::function<void(Tape &, int self)> back) {
  if (!req) return t.constant(std::move(out));
  // Push with a placeholder, then wire the self index into the closure.
  Var v = t.push(std::move(out), true, nullptr);
  int self = v.index();
  t.node(self).back = [self, back = std::move(back)](Tape &tp) { back(tp, self); };
  return v;
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  check(a.cols() == b.rows(), "matmul: inner dimensions disagree (" + shape_str(a.value()) +
                                  " * " + shape_str(b.value()) + ")");
  Tape &t = *a.tape();
  Matrix out = a.value() * b.value();
  int ia = a.index(), ib = b.index();
  return make_node(t, std::move(out), any_grad({a, b}), [ia, ib](Tape &tp, int self) {
    const Matrix &g = tp.node(self).grad;
    tp.accum(ia, g * tp.node(ib).value.transpose());
    tp.accum(ib, tp.node(ia).value.transpose() * g);
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape &t = *a.tape();
  int ia = a.index(), ib = b.index();
  return make_node(t, a.value() + b.value(), any_grad({a, b}), [ia, ib](Tape &tp, int self) {
    const Matrix &g = tp.node(self).grad;
    tp.accum(ia, g);
    tp.accum(ib, g);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape &t = *a.tape();
  int ia = a.index(), ib = b.index();
  return make_node(t, a.value() - b.value(), any_grad({a, b}), [ia, ib](Tape &tp, int self) {
    const Matrix &g = tp.node(self).grad;
    tp.accum(ia, g);
    tp.accum(ib, -g);
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Tape &t = *a.tape();
  int ia = a.index(), ib = b.index();
  return make_node(t, a.value().cwiseProduct(b.value()), any_grad({a, b}),
                   [ia, ib](Tape &tp, int self) {
                     const Matrix &g = tp.node(self).grad;
                     tp.accum(ia, g.cwiseProduct(tp.node(ib).value));
                     tp.accum(ib, g.cwiseProduct(tp.node(ia).value));
                   });
}

Var div(Var a, Var b) {
  check_same_tape(a, b);
  check(a.rows() == b.rows() && a.cols() == b.cols(), "div: shape mismatch");
  Tape &t = *a.tape();
  int ia = a.index(), ib = b.index();
  return make_node(t, a.value().cwiseQuotient(b.value()), any_grad({a, b}),
                   [ia, ib](Tape &tp, int self) {
                     const Matrix &g = tp.node(self).grad;
                     const Matrix &bv = tp.node(ib).value;
                     tp.accum(ia, g.cwiseQuotient(bv));
                     tp.accum(ib, -g.cwiseProduct(tp.node(self).value).cwiseQuotient(bv));
                   });
}

Var scale(Var a, double s) {
  Tape &t = *a.tape();
  int ia = a.index();
  return make_node(t, a.value() * s, a.requires_grad(), [ia, s](Tape &tp, int self) {
    tp.accum(ia, tp.node(self).grad * s);
  });
}

Var add_scalar(Var a, double s) {
  Tape &t = *a.tape();
  int ia = a.index();
  return make_node(t, a.value().array() + s, a.requires_grad(), [ia](Tape &tp, int self) {
    tp.accum(ia, tp.node(self).grad);
  });
}

Var exp(Var a) {
  Tape &t = *a.tape();
  int ia = a.index();
  return make_node(t, a.value().array().exp(), a.requires_grad(), [ia](Tape &tp, int self) {
    tp.accum(ia, tp.node(self).grad.cwiseProduct(tp.node(self).value));
  });
}

Var log(Var a) {
  Tape &t = *a.tape();
  int ia = a.index();
  return make_node(t, a.value().array().log(), a.requires_grad(), [ia](Tape &tp, int self) {
    tp.accum(ia, tp.node(self).grad.cwiseQuotient(tp.node(ia).value));
  });
}

Var sqrt(Var a) {
  Tape &t = *a.tape();
  int ia = a.index();
  return make_node(t, a.value().array().sqrt(), a.requires_grad(), [ia](Tape &tp, int self) {
    tp.accum(ia, (tp.node(self).grad.array() * 0.5 / tp.node(self).value.array()).matrix());
  });
}

Var square(Var a) {
  Tape &t = *a.tape();
  int ia = a.index();
  return make_node(t, a.value().array().square(), a.requires_grad(), [ia](Tape &tp, int self) {
    tp.accum(ia, (tp.node(self).grad.array() * 2.0 * tp.node(ia).value.array()).matrix());
  });
}

double softplus_val(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double softplus_inv(double y) {
  if (y <= 0.0) throw DimensionError("softplus_inv: argument must be positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

Var softplus(Var a) {
  Tape &t = *a.tape();
  int ia = a.index();
  return make_node(t, a.value().unaryExpr([](double x) { return softplus_val(x); }),
                   a.requires_grad(), [ia](Tape &tp, int self) {
                     Matrix sig = tp.node(ia).value.unaryExpr(
                         [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
                     tp.accum(ia, tp.node(self).grad.cwiseProduct(sig));
                   });
}

Var sum(Var a) {
  Tape &t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  int ia = a.index();
  long r = a.rows(), c = a.cols();
  return make_node(t, std::move(out), a.requires_grad(), [ia, r, c](Tape &tp, int self) {
    tp.accum(ia, Matrix::Constant(r, c, tp.node(self).grad(0, 0)));
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.rows() * a.cols())); }

Var rowsum(Var a) {
  Tape &t = *a.tape();
  int ia = a.index();
  long c = a.cols();
  return make_node(t, a.value().rowwise().sum(), a.requires_grad(), [ia, c](Tape &tp, int self) {
    tp.accum(ia, tp.node(self).grad * Eigen::RowVectorXd::Ones(c));
  });
}

Var colsum(Var a) {
  Tape &t = *a.tape();
  int ia = a.index();
  long r = a.rows();
  return make_node(t, a.value().colwise().sum(), a.requires_grad(), [ia, r](Tape &tp, int self) {
    tp.accum(ia, Eigen::VectorXd::Ones(r) * tp.node(self).grad);
  });
}

Var transpose(Var a) {
  Tape &t = *a.tape();
  int ia = a.index();
  return make_node(t, a.value().transpose(), a.requires_grad(), [ia](Tape &tp, int self) {
    tp.accum(ia, tp.node(self).grad.transpose());
  });
}

Var tril(Var a) {
  check(a.rows() == a.cols(), "tril: square matrix required");
  Tape &t = *a.tape();
  Matrix out = a.value();
  out.triangularView<Eigen::StrictlyUpper>().setZero();
  int ia = a.index();
  return make_node(t, std::move(out), a.requires_grad(), [ia](Tape &tp, int self) {
    Matrix g = tp.node(self).grad;
    g.triangularView<Eigen::StrictlyUpper>().setZero();
    tp.accum(ia, g);
  });
}

Var diag_part(Var a) {
  check(a.rows() == a.cols(), "diag_part: square matrix required");
  Tape &t = *a.tape();
  int ia = a.index();
  long n = a.rows();
  return make_node(t, a.value().diagonal(), a.requires_grad(), [ia, n](Tape &tp, int self) {
    Matrix g = Matrix::Zero(n, n);
    g.diagonal() = tp.node(self).grad.col(0);
    tp.accum(ia, g);
  });
}

Var broadcast_cols(Var a, long ncols) {
  check(a.cols() == 1, "broadcast_cols: column vector required");
  Tape &t = *a.tape();
  int ia = a.index();
  Matrix out = a.value() * Eigen::RowVectorXd::Ones(ncols);
  return make_node(t, std::move(out), a.requires_grad(), [ia](Tape &tp, int self) {
    tp.accum(ia, tp.node(self).grad.rowwise().sum());
  });
}

Var broadcast_rows(Var a, long nrows) {
  check(a.rows() == 1, "broadcast_rows: row vector required");
  Tape &t = *a.tape();
  int ia = a.index();
  Matrix out = Eigen::VectorXd::Ones(nrows) * a.value();
  return make_node(t, std::move(out), a.requires_grad(), [ia](Tape &tp, int self) {
    tp.accum(ia, tp.node(self).grad.colwise().sum());
  });
}

Var rows(Var a, long start, long count) {
  check(start >= 0 && count >= 0 && start + count <= a.rows(), "rows: slice out of range");
  Tape &t = *a.tape();
  int ia = a.index();
  long r = a.rows(), c = a.cols();
  return make_node(t, a.value().middleRows(start, count), a.requires_grad(),
                   [ia, start, count, r, c](Tape &tp, int self) {
                     Matrix g = Matrix::Zero(r, c);
                     g.middleRows(start, count) = tp.node(self).grad;
                     tp.accum(ia, g);
                   });
}

Var cols(Var a, long start, long count) {
  check(start >= 0 && count >= 0 && start + count <= a.cols(), "cols: slice out of range");
  Tape &t = *a.tape();
  int ia = a.index();
  long r = a.rows(), c = a.cols();
  return make_node(t, a.value().middleCols(start, count), a.requires_grad(),
                   [ia, start, count, r, c](Tape &tp, int self) {
                     Matrix g = Matrix::Zero(r, c);
                     g.middleCols(start, count) = tp.node(self).grad;
                     tp.accum(ia, g);
                   });
}

Var vcat(Var a, Var b) {
  check_same_tape(a, b);
  check(a.cols() == b.cols(), "vcat: column counts disagree");
  Tape &t = *a.tape();
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a.value(), b.value();
  int ia = a.index(), ib = b.index();
  long ra = a.rows(), rb = b.rows();
  return make_node(t, std::move(out), any_grad({a, b}), [ia, ib, ra, rb](Tape &tp, int self) {
    const Matrix &g = tp.node(self).grad;
    tp.accum(ia, g.topRows(ra));
    tp.accum(ib, g.bottomRows(rb));
  });
}

Var hcat(Var a, Var b) {
  check_same_tape(a, b);
  check(a.rows() == b.rows(), "hcat: row counts disagree");
  Tape &t = *a.tape();
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  int ia = a.index(), ib = b.index();
  long ca = a.cols(), cb = b.cols();
  return make_node(t, std::move(out), any_grad({a, b}), [ia, ib, ca, cb](Tape &tp, int self) {
    const Matrix &g = tp.node(self).grad;
    tp.accum(ia, g.leftCols(ca));
    tp.accum(ib, g.rightCols(cb));
  });
}

namespace {
Matrix reshape_rowmajor(const Matrix &a, long r, long c) {
  Matrix out(r, c);
  long k = 0;
  for (long i = 0; i < a.rows(); ++i)
    for (long j = 0; j < a.cols(); ++j, ++k) out(k / c, k % c) = a(i, j);
  return out;
}
} // namespace

Var reshape(Var a, long r, long c) {
  check(r * c == a.rows() * a.cols(), "reshape: element count mismatch");
  Tape &t = *a.tape();
  int ia = a.index();
  long ar = a.rows(), ac = a.cols();
  return make_node(t, reshape_rowmajor(a.value(), r, c), a.requires_grad(),
                   [ia, ar, ac](Tape &tp, int self) {
                     tp.accum(ia, reshape_rowmajor(tp.node(self).grad, ar, ac));
                   });
}

Var clamp_nonneg(Var a, double tol) {
  Tape &t = *a.tape();
  Matrix out = a.value();
  for (long j = 0; j < out.cols(); ++j)
    for (long i = 0; i < out.rows(); ++i) {
      double v = out(i, j);
      if (v < -tol) {
        std::ostringstream os;
        os << "clamp_nonneg: entry (" << i << "," << j << ") = " << v << " below -" << tol;
        throw NumericalError(os.str());
      }
      if (v < 0.0) out(i, j) = 0.0;
    }
  int ia = a.index();
  return make_node(t, std::move(out), a.requires_grad(), [ia](Tape &tp, int self) {
    Matrix mask = (tp.node(self).value.array() > 0.0).cast<double>();
    tp.accum(ia, tp.node(self).grad.cwiseProduct(mask));
  });
}

double cholesky_jitter(const Matrix &a) {
  double base = a.diagonal().mean();
  if (!(base > 0.0)) base = 1.0;
  return 1e-6 * base;
}

namespace {
Var push_cholesky_node(Tape &t, Matrix l, Var a);
} // namespace

Var cholesky(Var a) {
  check(a.rows() == a.cols(), "cholesky: square matrix required");
  Tape &t = *a.tape();
  const Matrix &av = a.value();
  double base = av.diagonal().mean();
  if (!(base > 0.0)) base = 1.0;
  Matrix l;
  long pivot = -1;
  double rel = 1e-6;
  for (; rel <= 1e-2 + 1e-15; rel *= 10.0) {
    l = av + rel * base * Matrix::Identity(av.rows(), av.cols());
    pivot = cholesky_inplace(l);
    if (pivot < 0) break;
  }
  if (pivot >= 0) {
    std::ostringstream os;
    os << "cholesky: non-positive pivot at index " << pivot << " after jitter escalation";
    throw NumericalError(os.str());
  }
  return push_cholesky_node(t, std::move(l), a);
}

Var cholesky_exact(Var a) {
  check(a.rows() == a.cols(), "cholesky_exact: square matrix required");
  Tape &t = *a.tape();
  Matrix l = a.value();
  long pivot = cholesky_inplace(l);
  if (pivot >= 0) {
    std::ostringstream os;
    os << "cholesky_exact: non-positive pivot at index " << pivot;
    throw NumericalError(os.str());
  }
  return push_cholesky_node(t, std::move(l), a);
}

namespace {
Var push_cholesky_node(Tape &t, Matrix l, Var a) {
  int ia = a.index();
  return make_node(t, std::move(l), a.requires_grad(), [ia](Tape &tp, int self) {
    // Murray's rule: Abar = 0.5 (S + S^T), S = L^-T Phi(L^T Lbar) L^-1,
    // Phi = lower triangle with halved diagonal.
    const Matrix &l = tp.node(self).value;
    const Matrix &lbar = tp.node(self).grad;
    Matrix p = l.transpose() * lbar;
    p.triangularView<Eigen::StrictlyUpper>().setZero();
    p.diagonal() *= 0.5;
    Matrix s = l.transpose().triangularView<Eigen::Upper>().solve(p);
    s = l.transpose().triangularView<Eigen::Upper>().solve(s.transpose()).transpose();
    tp.accum(ia, 0.5 * (s + s.transpose()));
  });
}
} // namespace

Var solve_lower(Var l, Var b) {
  check_same_tape(l, b);
  check(l.rows() == l.cols(), "solve_lower: square matrix required");
  check(l.rows() == b.rows(), "solve_lower: dimension mismatch");
  for (long i = 0; i < l.rows(); ++i)
    if (l.value()(i, i) == 0.0)
      throw NumericalError("solve_lower: zero diagonal at index " + std::to_string(i));
  Tape &t = *l.tape();
  Matrix x = l.value().triangularView<Eigen::Lower>().solve(b.value());
  int il = l.index(), ib = b.index();
  return make_node(t, std::move(x), any_grad({l, b}), [il, ib](Tape &tp, int self) {
    const Matrix &lv = tp.node(il).value;
    const Matrix &xv = tp.node(self).value;
    Matrix bbar = lv.transpose().triangularView<Eigen::Upper>().solve(tp.node(self).grad);
    Matrix lbar = -(bbar * xv.transpose());
    lbar.triangularView<Eigen::StrictlyUpper>().setZero();
    tp.accum(il, lbar);
    tp.accum(ib, bbar);
  });
}

Var solve_lower_t(Var l, Var b) {
  check_same_tape(l, b);
  check(l.rows() == l.cols(), "solve_lower_t: square matrix required");
  check(l.rows() == b.rows(), "solve_lower_t: dimension mismatch");
  for (long i = 0; i < l.rows(); ++i)
    if (l.value()(i, i) == 0.0)
      throw NumericalError("solve_lower_t: zero diagonal at index " + std::to_string(i));
  Tape &t = *l.tape();
  Matrix x = l.value().transpose().triangularView<Eigen::Upper>().solve(b.value());
  int il = l.index(), ib = b.index();
  return make_node(t, std::move(x), any_grad({l, b}), [il, ib](Tape &tp, int self) {
    const Matrix &lv = tp.node(il).value;
    const Matrix &xv = tp.node(self).value;
    Matrix bbar = lv.triangularView<Eigen::Lower>().solve(tp.node(self).grad);
    Matrix lbar = -(xv * bbar.transpose());
    lbar.triangularView<Eigen::StrictlyUpper>().setZero();
    tp.accum(il, lbar);
    tp.accum(ib, bbar);
  });
}

Var logdet_from_chol(Var l) { return scale(sum(log(diag_part(l))), 2.0); }

} // namespace wishflow::ad
