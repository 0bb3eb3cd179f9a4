// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "mtwb/tensor.hpp"

namespace mtwb {

struct FdReport {
  double max_rel_error = 0.0;
  Index worst_index = -1;
  // True when the probed function routed through a straight-through
  // quantizer; such paths are piecewise constant and are skipped rather
  // than differenced.
  bool skipped_ste = false;
};

// Compares the tape gradient of the scalar-valued `f` at `point` against
// central finite differences, coordinate by coordinate. `f` must accept both
// recorded and constant tensors. Relative error uses
// |ga - gfd| / max(1e-3, |ga|, |gfd|) and the worst coordinate is reported.
FdReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           double step = 1e-5);

}  // namespace mtwb
