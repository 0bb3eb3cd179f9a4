// SPDX-License-Identifier: Apache-2.0
#include "mtwb/finite_diff.hpp"

#include <cmath>

namespace mtwb {

FdReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           double step) {
  Array analytic;
  bool skipped = false;
  {
    Tape tape;
    Tensor leaf = tape.watch(point);
    Tensor loss = f(leaf);
    if (loss.numel() != 1) {
      throw DimensionError("finite_diff_check: f must be scalar-valued, got " + shape_str(loss.shape()));
    }
    skipped = tape.saw_straight_through();
    if (!skipped) {
      tape.backward(loss);
      const Array& g = tape.grad(leaf);
      analytic = g.size() ? g : Array::Zero(point.numel());
    }
  }
  if (skipped) return {0.0, -1, true};

  FdReport report;
  Array values = point.array();
  for (Index i = 0; i < point.numel(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double fp = f(Tensor::from_array(point.shape(), values)).item();
    values[i] = saved - step;
    const double fm = f(Tensor::from_array(point.shape(), values)).item();
    values[i] = saved;
    const double fd = (fp - fm) / (2.0 * step);
    // The denominator floor absorbs central-difference round-off
    // (~eps*|f|/2h) on coordinates whose true gradient is near zero.
    const double denom = std::max({1e-3, std::abs(fd), std::abs(analytic[i])});
    const double rel = std::abs(analytic[i] - fd) / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  return report;
}

}  // namespace mtwb
