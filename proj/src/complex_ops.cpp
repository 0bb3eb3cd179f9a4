// SPDX-License-Identifier: Apache-2.0
#include "mtwb/complex_ops.hpp"

#include "mtwb/errors.hpp"

namespace mtwb {

CTensor conj(const CTensor& a) { return {a.re, scalar_mul(a.im, -1.0)}; }

CTensor cmul(const CTensor& a, const CTensor& b) {
  return {sub(mul(a.re, b.re), mul(a.im, b.im)), add(mul(a.re, b.im), mul(a.im, b.re))};
}

CTensor cmatmul(const CTensor& a, const CTensor& b) {
  return {sub(matmul(a.re, b.re), matmul(a.im, b.im)),
          add(matmul(a.re, b.im), matmul(a.im, b.re))};
}

Tensor cabs2(const CTensor& a) { return add(mul(a.re, a.re), mul(a.im, a.im)); }

CTensor from_interleaved(const Tensor& x) {
  return {deinterleave_even(x), deinterleave_odd(x)};
}

Tensor to_interleaved(const CTensor& a) { return interleave2(a.re, a.im); }

Tensor tokens_from_cmatrix(const Eigen::MatrixXcd& m) {
  Array data(2 * m.size());
  Index idx = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      data[idx++] = m(r, c).real();
      data[idx++] = m(r, c).imag();
    }
  }
  return Tensor::from_array({m.rows(), 2 * m.cols()}, std::move(data));
}

Eigen::MatrixXcd cmatrix_from_tokens_2d(const Tensor& t) {
  if (t.rank() != 2 || t.shape()[1] % 2 != 0) {
    throw DimensionError("cmatrix_from_tokens_2d: need rank-2 with even last extent, got " +
                         shape_str(t.shape()));
  }
  const Index rows = t.shape()[0], cols = t.shape()[1] / 2;
  Eigen::MatrixXcd m(rows, cols);
  const double* p = t.array().data();
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      m(r, c) = {p[(r * cols + c) * 2], p[(r * cols + c) * 2 + 1]};
    }
  }
  return m;
}

Tensor batch_tokens(const std::vector<Eigen::MatrixXcd>& ms) {
  if (ms.empty()) throw DimensionError("batch_tokens: empty batch");
  const Index rows = ms.front().rows(), cols = ms.front().cols();
  Array data(static_cast<Index>(ms.size()) * rows * 2 * cols);
  Index idx = 0;
  for (const auto& m : ms) {
    if (m.rows() != rows || m.cols() != cols) throw DimensionError("batch_tokens: ragged batch");
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) {
        data[idx++] = m(r, c).real();
        data[idx++] = m(r, c).imag();
      }
    }
  }
  return Tensor::from_array({static_cast<Index>(ms.size()), rows, 2 * cols}, std::move(data));
}

std::vector<Eigen::MatrixXcd> unbatch_tokens(const Tensor& t) {
  if (t.rank() != 3 || t.shape()[2] % 2 != 0) {
    throw DimensionError("unbatch_tokens: need rank-3 with even last extent, got " +
                         shape_str(t.shape()));
  }
  const Index b = t.shape()[0], rows = t.shape()[1], cols = t.shape()[2] / 2;
  std::vector<Eigen::MatrixXcd> out(static_cast<std::size_t>(b));
  const double* p = t.array().data();
  for (Index i = 0; i < b; ++i) {
    out[static_cast<std::size_t>(i)].resize(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) {
        const Index base = ((i * rows + r) * cols + c) * 2;
        out[static_cast<std::size_t>(i)](r, c) = {p[base], p[base + 1]};
      }
    }
  }
  return out;
}

}  // namespace mtwb
