// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "mtwb/errors.hpp"

namespace mtwb {

using Index = std::int64_t;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;  // flat row-major storage

std::string shape_str(const Shape& s);
Index numel_of(const Shape& s);

class Tape;

// Immutable dense 64-bit real array. Complex quantities are carried as
// interleaved re/im pairs along the last axis (length 2m for m complex
// entries). A tensor optionally participates in exactly one Tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::shared_ptr<const Array> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_values(Shape shape, std::vector<double> values);
  static Tensor from_array(Shape shape, Array values);
  // Row-major copy of an Eigen matrix.
  static Tensor from_matrix(const Eigen::MatrixXd& m);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index numel() const { return data_ ? data_->size() : 0; }
  Index extent(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

  const Array& array() const { return *data_; }
  const std::shared_ptr<const Array>& data() const { return data_; }
  double item() const;                            // numel()==1
  double at(std::initializer_list<Index> idx) const;
  Eigen::MatrixXd matrix() const;                 // rank 2 -> column-major copy

  bool requires_grad() const { return node_ >= 0; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

 private:
  std::shared_ptr<const Array> data_;
  Shape shape_;
  Tape* tape_ = nullptr;
  int node_ = -1;

  friend class Tape;
};

// Reverse-mode tape. Records primitive applications during the forward pass;
// backward() runs once, in reverse topological (= recording) order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `value` as a differentiable leaf of this tape.
  Tensor watch(const Tensor& value);

  // Propagates d(loss)/d(node) to every recorded node. `loss` must be a
  // scalar (numel 1) recorded on this tape; a tape can be consumed once.
  void backward(const Tensor& loss);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward() w.r.t. a recorded tensor.
  const Array& grad(const Tensor& t) const;
  // Gradients of all watched leaves, in watch order; zero-filled when unused.
  std::vector<Array> leaf_grads() const;

  // True once any straight-through quantizer has been recorded. The
  // finite-difference checker refuses to difference across such paths.
  bool saw_straight_through() const { return saw_ste_; }

  // --- primitive-implementation interface ---
  using BackwardFn = std::function<void(Tape&, const Array& gout)>;
  Tensor record(Shape shape, std::shared_ptr<const Array> value,
                std::initializer_list<const Tensor*> parents, BackwardFn fn);
  void accumulate(int node, const Array& g);
  void note_straight_through() { saw_ste_ = true; }

 private:
  struct Node {
    Index numel = 0;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<Array> grads_;
  std::vector<int> leaves_;
  bool consumed_ = false;
  bool has_grads_ = false;
  bool saw_ste_ = false;
};

// ---- primitive operations ----
//
// The primitive set is fixed; every differentiable primitive below is covered
// by the finite-difference suite. Ops record themselves whenever an operand
// carries a tape; mixing operands from two different tapes is an error.

// General matrix product with leading batch axes. Shapes [L..., m, k] x
// [L..., k, p] -> [L..., m, p]; either operand's leading axes may be absent
// entirely (shared across the batch).
Tensor matmul(const Tensor& a, const Tensor& b);

// Attention mixing A.V with order-independent inner summation: shapes
// [L..., n, n] x [L..., n, c]. Summation over the token axis is performed in
// canonical (sorted) order so a row permutation of the sequence permutes the
// output bit-exactly.
Tensor attn_mix(const Tensor& weights, const Tensor& values);

// Elementwise; `b` may also be a trailing-shape suffix of `a` (broadcast over
// the leading axes), which covers bias and positional-encoding adds.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // same shape only
Tensor div(const Tensor& a, const Tensor& b);  // same shape only
Tensor scalar_mul(const Tensor& x, double c);
Tensor scalar_add(const Tensor& x, double c);

// Multiplies each last-axis row of x by a per-row scalar s of shape
// [leading..., 1].
Tensor scale_last(const Tensor& x, const Tensor& s);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sqrt(const Tensor& x);   // requires x >= 0
Tensor rsqrt(const Tensor& x);  // requires x > 0
Tensor log(const Tensor& x);    // requires x > 0
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);

// Row softmax over the last axis, max-subtracted; the normalizer is summed in
// canonical order (see attn_mix). NaN input raises NumericError.
Tensor softmax_rows(const Tensor& x);

// Per-row standardization over the last axis (population variance,
// eps-regularized) followed by the affine map gain, bias (both shape [d]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose(const Tensor& x);  // rank 2
Tensor permute_axes(const Tensor& x, const std::vector<Index>& perm);
Tensor concat(const std::vector<Tensor>& parts, Index axis);
Tensor slice(const Tensor& x, Index axis, Index start, Index len);

Tensor sum_all(const Tensor& x);              // -> shape [1]
Tensor row_sums(const Tensor& x);             // sum over last axis, keepdim
Tensor broadcast_axis(const Tensor& x, Index axis, Index times);

// Interleaved re/im channel helpers: interleave2(a, b)[..., 2i] = a[..., i],
// [..., 2i+1] = b[..., i]; deinterleave_even/odd invert them.
Tensor interleave2(const Tensor& a, const Tensor& b);
Tensor deinterleave_even(const Tensor& x);
Tensor deinterleave_odd(const Tensor& x);

// Uniform mid-rise quantize-dequantize on [0,1] with 2^bits cells; the
// backward pass is the identity (straight-through). Input outside [0,1]
// raises DomainError.
Tensor ste_quantize(const Tensor& x, int bits);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& x) { return scalar_mul(x, c); }
inline Tensor operator*(const Tensor& x, double c) { return scalar_mul(x, c); }

// ---- multiply-accumulate accounting ----
// matmul and attn_mix add m*k*p per batched product to a global counter; the
// transformer FLOP ledger is checked against this tally.
void mac_counter_reset();
std::uint64_t mac_counter_value();

}  // namespace mtwb
