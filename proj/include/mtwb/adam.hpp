// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "mtwb/param_store.hpp"
#include "mtwb/tensor.hpp"

namespace mtwb {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter first/second moment accumulators with bias correction.
class AdamState {
 public:
  AdamState(const ParamStore& params, AdamConfig cfg = {});

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  const Array& first_moment(int idx) const { return m_.at(static_cast<std::size_t>(idx)); }
  const Array& second_moment(int idx) const { return v_.at(static_cast<std::size_t>(idx)); }

 private:
  friend void adam_step(ParamStore&, const std::vector<Array>&, AdamState&);
  AdamConfig cfg_;
  std::vector<Array> m_, v_;
  std::int64_t step_ = 0;
};

// One bias-corrected Adam update over all parameters; grads align with the
// store order (Tape::leaf_grads of ParamStore::watch_all).
void adam_step(ParamStore& params, const std::vector<Array>& grads, AdamState& state);

}  // namespace mtwb
