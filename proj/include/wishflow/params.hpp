#pragma once

#include <map>
#include <set>
#include <string>

#include "wishflow/autodiff.hpp"

namespace wishflow {

// Named parameter arrays. Ordered container so iteration (optimizer loops,
// checkpoints, finite-difference sweeps) is deterministic.
class ParamStore {
public:
  void add(const std::string &name, ad::Matrix value, bool trainable = true) {
    if (values_.count(name)) throw DimensionError("parameter already exists: " + name);
    values_.emplace(name, std::move(value));
    if (trainable) trainable_.insert(name);
  }

  bool has(const std::string &name) const { return values_.count(name) > 0; }

  ad::Matrix &at(const std::string &name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw DimensionError("unknown parameter: " + name);
    return it->second;
  }
  const ad::Matrix &at(const std::string &name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw DimensionError("unknown parameter: " + name);
    return it->second;
  }

  bool trainable(const std::string &name) const { return trainable_.count(name) > 0; }
  void set_trainable(const std::string &name, bool flag) {
    at(name);
    if (flag)
      trainable_.insert(name);
    else
      trainable_.erase(name);
  }

  const std::map<std::string, ad::Matrix> &values() const { return values_; }
  std::map<std::string, ad::Matrix> &values() { return values_; }

private:
  std::map<std::string, ad::Matrix> values_;
  std::set<std::string> trainable_;
};

// One graph build over a tape: binds store parameters as leaves, caching by
// name so layers that share a parameter (tied kernels, shared inducing
// inputs) reference a single tape node.
class GraphContext {
public:
  GraphContext(ad::Tape &tape, ParamStore &store) : tape_(tape), store_(store) {}

  ad::Var param(const std::string &name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    ad::Var v = store_.trainable(name) ? tape_.leaf(store_.at(name))
                                       : tape_.constant(store_.at(name));
    bound_.emplace(name, v);
    return v;
  }

  // Gradient of the last backward() loss w.r.t. a bound parameter.
  ad::Matrix grad(const std::string &name) const {
    auto it = bound_.find(name);
    if (it == bound_.end()) {
      const ad::Matrix &v = store_.at(name);
      return ad::Matrix::Zero(v.rows(), v.cols());
    }
    return tape_.grad(it->second);
  }

  ad::Tape &tape() { return tape_; }
  ParamStore &store() { return store_; }
  const std::map<std::string, ad::Var> &bound() const { return bound_; }

private:
  ad::Tape &tape_;
  ParamStore &store_;
  std::map<std::string, ad::Var> bound_;
};

} // namespace wishflow
