// SPDX-License-Identifier: Apache-2.0
#include "mtwb/adam.hpp"

#include <cmath>

#include "mtwb/errors.hpp"

namespace mtwb {

AdamState::AdamState(const ParamStore& params, AdamConfig cfg) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Index n = params.value(static_cast<int>(i)).numel();
    m_.push_back(Array::Zero(n));
    v_.push_back(Array::Zero(n));
  }
}

void adam_step(ParamStore& params, const std::vector<Array>& grads, AdamState& state) {
  if (grads.size() != params.size() || state.m_.size() != params.size()) {
    throw DimensionError("adam_step: gradient/state count does not match parameter count");
  }
  state.step_ += 1;
  const auto& c = state.cfg_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params.value(static_cast<int>(i));
    const Array& g = grads[i];
    if (g.size() != p.numel()) {
      throw DimensionError("adam_step: gradient shape mismatch for " + params.name(static_cast<int>(i)));
    }
    Array& m = state.m_[i];
    Array& v = state.v_[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.square();
    const Array mhat = m / bc1;
    const Array vhat = v / bc2;
    Array updated = p.array() - c.lr * mhat / (vhat.sqrt() + c.eps);
    params.set_value(static_cast<int>(i), Tensor::from_array(p.shape(), std::move(updated)));
  }
}

}  // namespace mtwb
