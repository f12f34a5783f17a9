#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fd_check.hpp"
#include "wishflow/kernel.hpp"
#include "wishflow/rng.hpp"

using namespace wishflow;
using ad::Matrix;
using ad::Tape;
using ad::Var;
using kernels::RbfArdConfig;

namespace {

ParamStore make_store(const RbfArdConfig &cfg, double ls, double var) {
  ParamStore s;
  kernels::init_rbf_ard(s, cfg, ls, var);
  return s;
}

} // namespace

TEST_CASE("zero distance gives signal variance") {
  RbfArdConfig cfg{"k", 3};
  ParamStore s = make_store(cfg, 1.7, 2.3);
  Eigen::VectorXd x(3);
  x << 0.4, -1.0, 2.0;
  CHECK(kernels::eval(s, cfg, x, x) == doctest::Approx(2.3).epsilon(1e-12));
}

TEST_CASE("hand-computed scalar value") {
  // sigma^2 = 2, l = (1,1), x = (1,0), x2 = (0,0) -> 2 exp(-1/2)
  RbfArdConfig cfg{"k", 2};
  ParamStore s = make_store(cfg, 1.0, 2.0);
  Eigen::VectorXd x(2), x2(2);
  x << 1, 0;
  x2 << 0, 0;
  CHECK(kernels::eval(s, cfg, x, x2) == doctest::Approx(2.0 * std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("symmetry on random pairs") {
  RbfArdConfig cfg{"k", 4};
  ParamStore s = make_store(cfg, 0.8, 1.5);
  rng::NoiseStream ns(5);
  for (int i = 0; i < 10; ++i) {
    Eigen::VectorXd a = ns.normal(i, 0, 0, 4, 1);
    Eigen::VectorXd b = ns.normal(i, 0, 1, 4, 1);
    CHECK(kernels::eval(s, cfg, a, b) == doctest::Approx(kernels::eval(s, cfg, b, a)).epsilon(1e-14));
  }
}

TEST_CASE("dimension mismatch is a contract error") {
  RbfArdConfig cfg{"k", 2};
  ParamStore s = make_store(cfg, 1.0, 1.0);
  Eigen::VectorXd a(2), b(3);
  a.setZero();
  b.setZero();
  CHECK_THROWS_AS(kernels::eval(s, cfg, a, b), DimensionError);
}

TEST_CASE("gram diagonal, symmetry, positive definiteness") {
  RbfArdConfig cfg{"k", 2};
  ParamStore s = make_store(cfg, 1.2, 0.9);
  rng::NoiseStream ns(42);
  Matrix X = ns.normal(0, 0, 0, 10, 2);
  Matrix Z = ns.normal(0, 0, 1, 4, 2);

  Tape t;
  GraphContext ctx(t, s);
  kernels::BoundKernel k = bind_kernel(ctx, cfg);
  Matrix kxx = kernels::gram(t, k, t.constant(X), t.constant(X)).value();
  Matrix kxz = kernels::gram(t, k, t.constant(X), t.constant(Z)).value();
  Matrix kzx = kernels::gram(t, k, t.constant(Z), t.constant(X)).value();

  for (long i = 0; i < 10; ++i) CHECK(kxx(i, i) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK((kxz - kzx.transpose()).norm() < 1e-14);

  // Eigensolver oracle: smallest eigenvalue of K + 1e-6 I is positive.
  Eigen::SelfAdjointEigenSolver<Matrix> es(kxx + 1e-6 * Matrix::Identity(10, 10));
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("hyperparameter and input gradients match finite differences") {
  RbfArdConfig cfg{"k", 3};
  rng::NoiseStream ns(9);
  Matrix X = ns.normal(0, 0, 0, 5, 3);
  Matrix Z = ns.normal(0, 0, 1, 3, 3);
  Matrix proj = ns.normal(0, 0, 2, 5, 3);

  // Leaves: raw lengthscales, raw variance, Z.
  Matrix raw_ls = Matrix::Constant(3, 1, ad::softplus_inv(1.1));
  Matrix raw_var = Matrix::Constant(1, 1, ad::softplus_inv(0.7));

  auto loss = [&](Tape &t, const std::vector<Var> &v) {
    kernels::BoundKernel k{ad::softplus(v[0]), ad::softplus(v[1])};
    Var g = kernels::gram(t, k, t.constant(X), v[2]);
    return ad::sum(ad::mul(g, t.constant(proj)));
  };
  auto res = fdcheck::compare(loss, {raw_ls, raw_var, Z});
  CHECK(res.max_rel_err < 1e-4);
}
