#pragma once

#include <string>
#include <utility>
#include <vector>

#include "wishflow/autodiff.hpp"
#include "wishflow/rng.hpp"

namespace wishflow::data {

struct TabularDataset {
  ad::Matrix X; // N x d
  ad::Matrix y; // N x eta
  std::vector<std::string> feature_names, target_names;
};

struct TimeSeriesDataset {
  Eigen::VectorXd times; // hours, strictly increasing
  ad::Matrix Y;          // len x eta
  ad::Matrix mask;       // 1 = measured, 0 = interpolated fill
  std::vector<std::string> names;
};

// Column standardization fitted on training data only. Zero-variance columns
// are dropped (with a stderr warning) rather than divided by zero.
struct Standardizer {
  Eigen::VectorXd mean, std; // per kept column
  std::vector<long> kept;    // indices into the original columns

  static Standardizer fit(const ad::Matrix &X);
  ad::Matrix apply(const ad::Matrix &X) const;
  ad::Matrix invert(const ad::Matrix &Z) const;
};

// CSV with a header row; empty cells and the literal NA are missing values.
// Tabular: rows containing missing values are dropped. target_columns name
// the y columns; everything else becomes a feature.
TabularDataset load_tabular_csv(const std::string &path,
                                const std::vector<std::string> &target_columns,
                                char delimiter = ',');

// Time series: time_column gives hours; missing values are linearly
// interpolated per column (nearest-value fill at the boundaries) and flagged
// in the mask. A column with no observed value at all is a schema error.
TimeSeriesDataset load_timeseries_csv(const std::string &path, const std::string &time_column,
                                      char delimiter = ',');

// Full-precision writer; read-back reproduces values bitwise.
void write_csv(const std::string &path, const std::vector<std::string> &header,
               const ad::Matrix &values, char delimiter = ',');

// Seeded permutation split into ceil(fraction*N) train rows and the rest.
std::pair<TabularDataset, TabularDataset> split(const TabularDataset &ds, double fraction,
                                                std::uint64_t seed);

} // namespace wishflow::data
