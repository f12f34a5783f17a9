#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "wishflow/data.hpp"

using namespace wishflow;
using ad::Matrix;

namespace {

std::string write_temp(const std::string &name, const std::string &content) {
  std::string path = "/tmp/wishflow_data_" + name;
  std::ofstream out(path);
  out << content;
  return path;
}

} // namespace

TEST_CASE("interior missing value is linearly interpolated and masked") {
  std::string p = write_temp("interp.csv", "t,a,b\n0,1.0,5\n1,,6\n2,3.0,7\n");
  data::TimeSeriesDataset ds = data::load_timeseries_csv(p, "t");
  CHECK(ds.Y(1, 0) == doctest::Approx(2.0).epsilon(1e-15)); // midpoint of 1 and 3
  CHECK(ds.mask(1, 0) == 0.0);
  CHECK(ds.mask(0, 0) == 1.0);
  CHECK(ds.mask(1, 1) == 1.0);
  CHECK(ds.names == std::vector<std::string>{"a", "b"});
}

TEST_CASE("non-equidistant interpolation respects the time axis") {
  std::string p = write_temp("interp2.csv", "t,a\n0,0\n1,NA\n4,8\n");
  data::TimeSeriesDataset ds = data::load_timeseries_csv(p, "t");
  CHECK(ds.Y(1, 0) == doctest::Approx(2.0).epsilon(1e-15)); // 1/4 of the way
}

TEST_CASE("boundary missing values use nearest-value fill") {
  std::string p = write_temp("bound.csv", "t,a\n0,NA\n1,4\n2,NA\n");
  data::TimeSeriesDataset ds = data::load_timeseries_csv(p, "t");
  CHECK(ds.Y(0, 0) == 4.0);
  CHECK(ds.Y(2, 0) == 4.0);
  CHECK(ds.mask(0, 0) == 0.0);
}

TEST_CASE("parse errors carry context") {
  std::string p1 = write_temp("hdr.csv", "a,b\n");
  CHECK_THROWS_AS(data::load_tabular_csv(p1, {"b"}), ParseError);

  std::string p2 = write_temp("bad.csv", "a,b\n1,2\n3\n");
  try {
    data::load_tabular_csv(p2, {"b"});
    FAIL("expected ParseError");
  } catch (const ParseError &e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  std::string p3 = write_temp("num.csv", "a,b\n1,x2\n");
  CHECK_THROWS_AS(data::load_tabular_csv(p3, {"b"}), ParseError);

  std::string p4 = write_temp("allmiss.csv", "t,a\n0,NA\n1,\n");
  CHECK_THROWS_AS(data::load_timeseries_csv(p4, "t"), ParseError);

  std::string p5 = write_temp("times.csv", "t,a\n1,0\n1,1\n");
  CHECK_THROWS_AS(data::load_timeseries_csv(p5, "t"), ParseError);
}

TEST_CASE("tabular load drops incomplete rows and splits features from targets") {
  std::string p = write_temp("tab.csv", "x1,y,x2\n1,10,2\n3,NA,4\n5,30,6\n");
  data::TabularDataset ds = data::load_tabular_csv(p, {"y"});
  REQUIRE(ds.X.rows() == 2);
  CHECK(ds.X(0, 0) == 1.0);
  CHECK(ds.X(0, 1) == 2.0);
  CHECK(ds.y(1, 0) == 30.0);
  CHECK(ds.feature_names == std::vector<std::string>{"x1", "x2"});
  CHECK(ds.target_names == std::vector<std::string>{"y"});
}

TEST_CASE("write-read round trip is bitwise") {
  rng::NoiseStream ns(5);
  Matrix vals = ns.normal(0, 0, 0, 7, 3);
  vals(0, 0) = 1.0 / 3.0;
  vals(1, 1) = 1e-17;
  std::string p = "/tmp/wishflow_data_round.csv";
  data::write_csv(p, {"t", "a", "b"}, vals);
  // Make the first column valid times for the reader.
  Matrix vals2 = vals;
  for (long i = 0; i < 7; ++i) vals2(i, 0) = i;
  data::write_csv(p, {"t", "a", "b"}, vals2);
  data::TimeSeriesDataset ds = data::load_timeseries_csv(p, "t");
  CHECK(ds.Y(0, 0) == vals(0, 1));
  for (long i = 0; i < 7; ++i)
    for (long j = 0; j < 2; ++j) CHECK(ds.Y(i, j) == vals2(i, j + 1));
}

TEST_CASE("standardizer: zero mean, unit std, exact inverse, dropped columns") {
  rng::NoiseStream ns(6);
  Matrix X(50, 3);
  X.col(0) = ns.normal(0, 0, 0, 50, 1).array() * 3.0 + 17.0;
  X.col(1).setConstant(2.5); // zero variance: dropped
  X.col(2) = ns.normal(0, 0, 1, 50, 1).array() * 0.2 - 4.0;

  data::Standardizer st = data::Standardizer::fit(X);
  REQUIRE(st.kept == std::vector<long>{0, 2});
  Matrix Z = st.apply(X);
  for (long j = 0; j < 2; ++j) {
    CHECK(std::abs(Z.col(j).mean()) < 1e-8);
    double sd = std::sqrt((Z.col(j).array() - Z.col(j).mean()).square().sum() / 49);
    CHECK(std::abs(sd - 1.0) < 1e-8);
  }
  Matrix back = st.invert(Z);
  CHECK((back.col(0) - X.col(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((back.col(1) - X.col(2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("test data is standardized with train statistics only") {
  // Disjoint ranges: if test statistics leaked in, the test column would be
  // centered; with train statistics it must stay far from zero.
  Matrix train(40, 1), test(10, 1);
  rng::NoiseStream ns(7);
  train.col(0) = ns.normal(0, 0, 0, 40, 1).array() + 0.0;  // around 0
  test.col(0) = ns.normal(0, 0, 1, 10, 1).array() + 50.0;  // around 50

  data::Standardizer st = data::Standardizer::fit(train);
  Matrix zt = st.apply(test);
  CHECK(zt.col(0).mean() > 10.0);
  CHECK(std::abs(st.apply(train).col(0).mean()) < 1e-8);
}

TEST_CASE("seeded split: sizes, determinism, partition") {
  data::TabularDataset ds;
  ds.X.resize(10, 2);
  ds.y.resize(10, 1);
  for (long i = 0; i < 10; ++i) {
    ds.X.row(i) << static_cast<double>(i), static_cast<double>(10 * i);
    ds.y(i, 0) = static_cast<double>(i);
  }

  auto [train, test] = data::split(ds, 0.9, 123);
  CHECK(train.X.rows() == 9);
  CHECK(test.X.rows() == 1);

  auto [train2, test2] = data::split(ds, 0.9, 123);
  CHECK(train.X == train2.X);
  CHECK(test.y == test2.y);

  std::vector<int> seen(10, 0);
  for (long i = 0; i < 9; ++i) seen[static_cast<long>(train.y(i, 0))]++;
  seen[static_cast<long>(test.y(0, 0))]++;
  for (int c : seen) CHECK(c == 1);

  CHECK_THROWS_AS(data::split(ds, 1.0, 1), DimensionError);
  CHECK_THROWS_AS(data::split(ds, 0.95, 1), DimensionError); // empty test side
}
