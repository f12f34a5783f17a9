#include "wishflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

namespace wishflow::data {

using ad::Matrix;

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows; // NaN = missing
};

std::string trim(const std::string &s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string &line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) out.push_back(trim(field));
  if (!line.empty() && line.back() == delim) out.push_back("");
  return out;
}

CsvTable read_csv(const std::string &path, char delim) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  CsvTable t;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      t.header = split_line(line, delim);
      if (t.header.empty()) throw ParseError(path + ": empty header row");
      continue;
    }
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_line(line, delim);
    if (fields.size() != t.header.size())
      throw ParseError(path + ": line " + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    std::vector<double> row(fields.size());
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const std::string &f = fields[j];
      if (f.empty() || f == "NA") {
        row[j] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      char *end = nullptr;
      row[j] = std::strtod(f.c_str(), &end);
      if (end == f.c_str() || *end != '\0')
        throw ParseError(path + ": line " + std::to_string(lineno) + ": bad number '" + f + "'");
    }
    t.rows.push_back(std::move(row));
  }
  if (lineno == 0) throw ParseError(path + ": empty file");
  if (t.rows.empty()) throw ParseError(path + ": no data rows");
  return t;
}

long column_index(const CsvTable &t, const std::string &name, const std::string &path) {
  auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) throw ParseError(path + ": no column named '" + name + "'");
  return static_cast<long>(it - t.header.begin());
}

} // namespace

Standardizer Standardizer::fit(const Matrix &X) {
  Standardizer s;
  std::vector<double> means, stds;
  for (long j = 0; j < X.cols(); ++j) {
    double m = X.col(j).mean();
    double sd = std::sqrt((X.col(j).array() - m).square().sum() /
                          std::max<long>(1, X.rows() - 1));
    if (sd < 1e-12) {
      std::cerr << "standardize: dropping zero-variance column " << j << "\n";
      continue;
    }
    s.kept.push_back(j);
    means.push_back(m);
    stds.push_back(sd);
  }
  s.mean = Eigen::Map<Eigen::VectorXd>(means.data(), means.size());
  s.std = Eigen::Map<Eigen::VectorXd>(stds.data(), stds.size());
  return s;
}

Matrix Standardizer::apply(const Matrix &X) const {
  Matrix out(X.rows(), static_cast<long>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k)
    out.col(k) = (X.col(kept[k]).array() - mean(k)) / std(k);
  return out;
}

Matrix Standardizer::invert(const Matrix &Z) const {
  if (Z.cols() != static_cast<long>(kept.size()))
    throw DimensionError("Standardizer::invert: column count mismatch");
  Matrix out(Z.rows(), Z.cols());
  for (long k = 0; k < Z.cols(); ++k) out.col(k) = Z.col(k).array() * std(k) + mean(k);
  return out;
}

TabularDataset load_tabular_csv(const std::string &path,
                                const std::vector<std::string> &target_columns, char delimiter) {
  CsvTable t = read_csv(path, delimiter);
  std::vector<long> tcols;
  for (const std::string &name : target_columns) tcols.push_back(column_index(t, name, path));
  std::vector<long> fcols;
  for (long j = 0; j < static_cast<long>(t.header.size()); ++j)
    if (std::find(tcols.begin(), tcols.end(), j) == tcols.end()) fcols.push_back(j);
  if (tcols.empty()) throw ParseError(path + ": no target columns");
  if (fcols.empty()) throw ParseError(path + ": no feature columns");

  std::vector<const std::vector<double> *> complete;
  for (const auto &row : t.rows) {
    bool ok = true;
    for (double v : row)
      if (std::isnan(v)) ok = false;
    if (ok) complete.push_back(&row);
  }
  if (complete.empty()) throw ParseError(path + ": every row has missing values");

  TabularDataset ds;
  ds.X.resize(static_cast<long>(complete.size()), static_cast<long>(fcols.size()));
  ds.y.resize(static_cast<long>(complete.size()), static_cast<long>(tcols.size()));
  for (std::size_t i = 0; i < complete.size(); ++i) {
    for (std::size_t j = 0; j < fcols.size(); ++j) ds.X(i, j) = (*complete[i])[fcols[j]];
    for (std::size_t j = 0; j < tcols.size(); ++j) ds.y(i, j) = (*complete[i])[tcols[j]];
  }
  for (long j : fcols) ds.feature_names.push_back(t.header[j]);
  for (long j : tcols) ds.target_names.push_back(t.header[j]);
  return ds;
}

TimeSeriesDataset load_timeseries_csv(const std::string &path, const std::string &time_column,
                                      char delimiter) {
  CsvTable t = read_csv(path, delimiter);
  long tcol = column_index(t, time_column, path);
  const long len = static_cast<long>(t.rows.size());
  const long eta = static_cast<long>(t.header.size()) - 1;
  if (eta < 1) throw ParseError(path + ": time series needs at least one value column");

  TimeSeriesDataset ds;
  ds.times.resize(len);
  ds.Y.resize(len, eta);
  ds.mask = Matrix::Ones(len, eta);
  long k = 0;
  for (long j = 0; j < static_cast<long>(t.header.size()); ++j)
    if (j != tcol) ds.names.push_back(t.header[j]);
  for (long i = 0; i < len; ++i) {
    if (std::isnan(t.rows[i][tcol]))
      throw ParseError(path + ": missing time value at data row " + std::to_string(i + 1));
    ds.times(i) = t.rows[i][tcol];
    if (i > 0 && !(ds.times(i) > ds.times(i - 1)))
      throw ParseError(path + ": times must be strictly increasing (data row " +
                       std::to_string(i + 1) + ")");
    k = 0;
    for (long j = 0; j < static_cast<long>(t.header.size()); ++j) {
      if (j == tcol) continue;
      ds.Y(i, k) = t.rows[i][j];
      if (std::isnan(ds.Y(i, k))) ds.mask(i, k) = 0.0;
      ++k;
    }
  }

  // Linear interpolation against the time axis; nearest-value fill at the
  // boundaries (never extrapolate).
  for (long j = 0; j < eta; ++j) {
    std::vector<long> obs;
    for (long i = 0; i < len; ++i)
      if (ds.mask(i, j) > 0.5) obs.push_back(i);
    if (obs.empty())
      throw ParseError(path + ": column '" + ds.names[j] + "' has no observed values");
    for (long i = 0; i < len; ++i) {
      if (ds.mask(i, j) > 0.5) continue;
      auto hi = std::lower_bound(obs.begin(), obs.end(), i);
      if (hi == obs.begin()) {
        ds.Y(i, j) = ds.Y(obs.front(), j);
      } else if (hi == obs.end()) {
        ds.Y(i, j) = ds.Y(obs.back(), j);
      } else {
        long a = *(hi - 1), b = *hi;
        double w = (ds.times(i) - ds.times(a)) / (ds.times(b) - ds.times(a));
        ds.Y(i, j) = (1.0 - w) * ds.Y(a, j) + w * ds.Y(b, j);
      }
    }
  }
  return ds;
}

void write_csv(const std::string &path, const std::vector<std::string> &header,
               const Matrix &values, char delimiter) {
  if (static_cast<long>(header.size()) != values.cols())
    throw DimensionError("write_csv: header/column count mismatch");
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write file: " + path);
  for (std::size_t j = 0; j < header.size(); ++j)
    out << header[j] << (j + 1 < header.size() ? std::string(1, delimiter) : "\n");
  char buf[40];
  for (long i = 0; i < values.rows(); ++i)
    for (long j = 0; j < values.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", values(i, j));
      out << buf << (j + 1 < values.cols() ? std::string(1, delimiter) : "\n");
    }
}

std::pair<TabularDataset, TabularDataset> split(const TabularDataset &ds, double fraction,
                                                std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw DimensionError("split: fraction must be in (0, 1)");
  const long n = ds.X.rows();
  const long ntrain = static_cast<long>(std::ceil(fraction * n));
  if (ntrain < 1 || ntrain >= n) throw DimensionError("split: degenerate split sizes");

  std::vector<long> perm = rng::permutation(seed, 0x73706c74ULL, n);
  TabularDataset train, test;
  train.feature_names = test.feature_names = ds.feature_names;
  train.target_names = test.target_names = ds.target_names;
  train.X.resize(ntrain, ds.X.cols());
  train.y.resize(ntrain, ds.y.cols());
  test.X.resize(n - ntrain, ds.X.cols());
  test.y.resize(n - ntrain, ds.y.cols());
  for (long i = 0; i < n; ++i) {
    if (i < ntrain) {
      train.X.row(i) = ds.X.row(perm[i]);
      train.y.row(i) = ds.y.row(perm[i]);
    } else {
      test.X.row(i - ntrain) = ds.X.row(perm[i]);
      test.y.row(i - ntrain) = ds.y.row(perm[i]);
    }
  }
  return {train, test};
}

} // namespace wishflow::data
