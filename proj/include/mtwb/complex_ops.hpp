// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <vector>

#include "mtwb/tensor.hpp"

namespace mtwb {

// Complex quantities as re/im tensor pairs. The interleaved layout
// [..., 2m] with (re, im) channel pairs is the wire/network convention;
// these helpers move between the two.
struct CTensor {
  Tensor re, im;
};

CTensor conj(const CTensor& a);
CTensor cmul(const CTensor& a, const CTensor& b);     // elementwise
CTensor cmatmul(const CTensor& a, const CTensor& b);  // four real matmuls
Tensor cabs2(const CTensor& a);                       // |z|^2 elementwise
CTensor from_interleaved(const Tensor& x);
Tensor to_interleaved(const CTensor& a);

// Constant-tensor conversions for datasets and metrics.
Tensor tokens_from_cmatrix(const Eigen::MatrixXcd& m);           // [rows, 2*cols]
Eigen::MatrixXcd cmatrix_from_tokens_2d(const Tensor& t);        // rank 2
// Stacks samples into [B, rows, 2*cols]; all matrices must agree in shape.
Tensor batch_tokens(const std::vector<Eigen::MatrixXcd>& ms);
// Splits [B, rows, 2*cols] back into B complex matrices.
std::vector<Eigen::MatrixXcd> unbatch_tokens(const Tensor& t);

}  // namespace mtwb
