// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mtwb/tensor.hpp"

namespace mtwb {

// Ordered collection of named trainable parameters. The stored tensors are
// the master copy; watch_all() re-binds them onto a fresh tape each step and
// the optimizer writes back by index, so store order is the alignment
// contract between forward code, gradients, and Adam state.
class ParamStore {
 public:
  int add(const std::string& name, Tensor init);

  std::size_t size() const { return values_.size(); }
  const std::string& name(int idx) const { return names_.at(static_cast<std::size_t>(idx)); }
  const Tensor& value(int idx) const { return values_.at(static_cast<std::size_t>(idx)); }
  const Tensor& value(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  void set_value(int idx, Tensor v);

  const std::vector<Tensor>& values() const { return values_; }
  std::vector<Tensor> watch_all(Tape& tape) const;

  std::int64_t total_params() const;

  // Replace all values (used to restore a best-validation snapshot).
  std::vector<Tensor> snapshot() const { return values_; }
  void restore(const std::vector<Tensor>& snap);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace mtwb
