// SPDX-License-Identifier: Apache-2.0
#include "mtwb/param_store.hpp"

#include "mtwb/errors.hpp"

namespace mtwb {

int ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  if (init.tape() != nullptr) throw std::logic_error("parameter initial value must be a constant tensor");
  const int idx = static_cast<int>(values_.size());
  index_.emplace(name, idx);
  names_.push_back(name);
  values_.push_back(std::move(init));
  return idx;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return values_[static_cast<std::size_t>(it->second)];
}

void ParamStore::set_value(int idx, Tensor v) {
  Tensor& slot = values_.at(static_cast<std::size_t>(idx));
  if (v.shape() != slot.shape()) {
    throw DimensionError("parameter " + names_[static_cast<std::size_t>(idx)] + ": shape " +
                         shape_str(v.shape()) + " does not match " + shape_str(slot.shape()));
  }
  slot = std::move(v);
}

std::vector<Tensor> ParamStore::watch_all(Tape& tape) const {
  std::vector<Tensor> out;
  out.reserve(values_.size());
  for (const Tensor& v : values_) out.push_back(tape.watch(v));
  return out;
}

std::int64_t ParamStore::total_params() const {
  std::int64_t n = 0;
  for (const Tensor& v : values_) n += v.numel();
  return n;
}

void ParamStore::restore(const std::vector<Tensor>& snap) {
  if (snap.size() != values_.size()) throw ConfigError("snapshot size mismatch");
  for (std::size_t i = 0; i < snap.size(); ++i) set_value(static_cast<int>(i), snap[i]);
}

}  // namespace mtwb
