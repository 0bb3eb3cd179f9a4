// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mtwb {

// Shape/extent mismatches between operands. Messages always name the shapes involved.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid run/model configuration. Messages name the offending field.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Runtime numeric failures: NaN inputs, singular solves, diverged training.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inputs outside an operation's mathematical domain (e.g. quantizer input outside [0,1]).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mtwb
