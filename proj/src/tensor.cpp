// SPDX-License-Identifier: Apache-2.0
#include "mtwb/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace mtwb {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

std::atomic<std::uint64_t> g_mac_count{0};

void count_macs(std::uint64_t n) { g_mac_count.fetch_add(n, std::memory_order_relaxed); }

[[noreturn]] void dim_error(const std::string& op, const Shape& a, const Shape& b) {
  throw DimensionError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Tape shared by the recorded operands, nullptr when all are constants.
Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (t->tape() == nullptr) continue;
    if (tape != nullptr && tape != t->tape()) {
      throw std::logic_error("operands recorded on different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

Tensor finish(Shape shape, std::shared_ptr<Array> out, Tape* tape,
              std::initializer_list<const Tensor*> parents, Tape::BackwardFn fn) {
  if (tape == nullptr) return Tensor(std::move(shape), std::move(out));
  return tape->record(std::move(shape), std::move(out), parents, std::move(fn));
}

// Sum of `n` doubles in canonical (sorted) order: depends only on the
// multiset of terms, not their arrangement.
double ordered_sum(double* buf, Index n) {
  std::sort(buf, buf + n);
  double s = 0.0;
  for (Index i = 0; i < n; ++i) s += buf[i];
  return s;
}

// C[m,p] = A[m,k] B[k,p], row-major, accumulated in ascending-k order with
// one code path for every output entry. Unlike packed GEMM kernels, each
// output row's bits are independent of its position in the matrix, which the
// encoder's bit-level permutation-equivariance contract relies on.
void matmul_block(const double* a, const double* b, double* c, Index m, Index k, Index p) {
  std::fill(c, c + m * p, 0.0);
  for (Index i = 0; i < m; ++i) {
    double* crow = c + i * p;
    const double* arow = a + i * k;
    for (Index t = 0; t < k; ++t) {
      const double av = arow[t];
      const double* brow = b + t * p;
      for (Index j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

Index leading_product(const Shape& s, std::size_t upto) {
  Index p = 1;
  for (std::size_t i = 0; i < upto; ++i) p *= s[i];
  return p;
}

struct BatchedMatmulDims {
  Index batch, m, k, p;
  bool a_shared, b_shared;
  Shape out_shape;
};

BatchedMatmulDims matmul_dims(const char* op, const Shape& sa, const Shape& sb) {
  if (sa.size() < 2 || sb.size() < 2) dim_error(op, sa, sb);
  const Index m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
  const Index kb = sb[sb.size() - 2], p = sb[sb.size() - 1];
  if (ka != kb) dim_error(op, sa, sb);
  const Shape la(sa.begin(), sa.end() - 2);
  const Shape lb(sb.begin(), sb.end() - 2);
  BatchedMatmulDims d{1, m, ka, p, false, false, {}};
  if (la == lb) {
    d.batch = leading_product(la, la.size());
    d.out_shape = la;
  } else if (lb.empty()) {
    d.batch = leading_product(la, la.size());
    d.b_shared = true;
    d.out_shape = la;
  } else if (la.empty()) {
    d.batch = leading_product(lb, lb.size());
    d.a_shared = true;
    d.out_shape = lb;
  } else {
    dim_error(op, sa, sb);
  }
  d.out_shape.push_back(m);
  d.out_shape.push_back(p);
  return d;
}

// True when `suffix` equals the trailing extents of `full`.
bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

Shape replace_last(const Shape& s, Index v) {
  Shape r = s;
  r.back() = v;
  return r;
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

Index numel_of(const Shape& s) {
  Index n = 1;
  for (Index e : s) {
    if (e <= 0) throw DimensionError("shape with non-positive extent " + shape_str(s));
    n *= e;
  }
  return n;
}

// ---- Tensor ----

Tensor::Tensor(Shape shape, std::shared_ptr<const Array> data)
    : data_(std::move(data)), shape_(std::move(shape)) {
  if (!data_ || data_->size() != numel_of(shape_)) {
    throw DimensionError("tensor data length does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::zeros(Shape shape) {
  const Index n = numel_of(shape);
  return Tensor(std::move(shape), std::make_shared<Array>(Array::Zero(n)));
}

Tensor Tensor::full(Shape shape, double value) {
  const Index n = numel_of(shape);
  return Tensor(std::move(shape), std::make_shared<Array>(Array::Constant(n, value)));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
  auto arr = std::make_shared<Array>(Eigen::Map<const Array>(values.data(), static_cast<Index>(values.size())));
  return Tensor(std::move(shape), std::move(arr));
}

Tensor Tensor::from_array(Shape shape, Array values) {
  return Tensor(std::move(shape), std::make_shared<Array>(std::move(values)));
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m) {
  auto arr = std::make_shared<Array>(m.rows() * m.cols());
  MapM(arr->data(), m.rows(), m.cols()) = m;
  return Tensor({m.rows(), m.cols()}, std::move(arr));
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape_));
  return (*data_)[0];
}

double Tensor::at(std::initializer_list<Index> idx) const {
  if (static_cast<Index>(idx.size()) != rank()) {
    throw DimensionError("index rank mismatch for " + shape_str(shape_));
  }
  Index flat = 0;
  std::size_t i = 0;
  for (Index v : idx) {
    if (v < 0 || v >= shape_[i]) throw DimensionError("index out of range for " + shape_str(shape_));
    flat = flat * shape_[i] + v;
    ++i;
  }
  return (*data_)[flat];
}

Eigen::MatrixXd Tensor::matrix() const {
  if (rank() != 2) throw DimensionError("matrix() on tensor of shape " + shape_str(shape_));
  return CMapM(data_->data(), shape_[0], shape_[1]);
}

// ---- Tape ----

Tensor Tape::watch(const Tensor& value) {
  if (consumed_) throw std::logic_error("tape already consumed");
  if (value.tape() != nullptr) {
    throw std::logic_error("tensor already participates in a tape");
  }
  Tensor t = value;
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{t.numel(), nullptr});
  leaves_.push_back(t.node_);
  return t;
}

Tensor Tape::record(Shape shape, std::shared_ptr<const Array> value,
                    std::initializer_list<const Tensor*> parents, BackwardFn fn) {
  if (consumed_) throw std::logic_error("tape already consumed");
  for (const Tensor* p : parents) {
    if (p->tape() != nullptr && p->tape() != this) {
      throw std::logic_error("operand recorded on a different tape");
    }
  }
  Tensor t(std::move(shape), std::move(value));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{t.numel(), std::move(fn)});
  return t;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("tape already consumed; one backward per recording");
  if (loss.tape() != this || loss.node() < 0) {
    throw std::logic_error("loss is not recorded on this tape");
  }
  if (loss.numel() != 1) {
    throw DimensionError("backward requires scalar loss, got " + shape_str(loss.shape()));
  }
  grads_.assign(nodes_.size(), Array());
  grads_[static_cast<std::size_t>(loss.node())] = Array::Ones(1);
  for (int i = loss.node(); i >= 0; --i) {
    auto& g = grads_[static_cast<std::size_t>(i)];
    if (g.size() == 0) continue;
    if (nodes_[static_cast<std::size_t>(i)].backward) {
      nodes_[static_cast<std::size_t>(i)].backward(*this, g);
    }
  }
  has_grads_ = true;
  consumed_ = true;
}

void Tape::accumulate(int node, const Array& g) {
  if (node < 0) return;
  auto& slot = grads_[static_cast<std::size_t>(node)];
  if (slot.size() == 0) {
    slot = g;
  } else {
    slot += g;
  }
}

const Array& Tape::grad(const Tensor& t) const {
  if (!has_grads_) throw std::logic_error("grad() before backward()");
  if (t.tape() != this || t.node() < 0) throw std::logic_error("tensor not recorded on this tape");
  static const Array empty;
  const auto& g = grads_[static_cast<std::size_t>(t.node())];
  return g.size() ? g : empty;
}

std::vector<Array> Tape::leaf_grads() const {
  if (!has_grads_) throw std::logic_error("leaf_grads() before backward()");
  std::vector<Array> out;
  out.reserve(leaves_.size());
  for (int n : leaves_) {
    const auto& g = grads_[static_cast<std::size_t>(n)];
    out.push_back(g.size() ? g : Array::Zero(nodes_[static_cast<std::size_t>(n)].numel));
  }
  return out;
}

// ---- primitives ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto d = matmul_dims("matmul", a.shape(), b.shape());
  count_macs(static_cast<std::uint64_t>(d.batch) * d.m * d.k * d.p);
  auto out = std::make_shared<Array>(d.batch * d.m * d.p);
  {
    const double* pa = a.array().data();
    const double* pb = b.array().data();
    for (Index i = 0; i < d.batch; ++i) {
      matmul_block(pa + (d.a_shared ? 0 : i) * d.m * d.k, pb + (d.b_shared ? 0 : i) * d.k * d.p,
                   out->data() + i * d.m * d.p, d.m, d.k, d.p);
    }
  }
  Tape* tape = common_tape({&a, &b});
  const int na = a.node(), nb = b.node();
  auto da = a.data(), db = b.data();
  return finish(d.out_shape, std::move(out), tape, {&a, &b},
                [d, na, nb, da, db](Tape& t, const Array& gout) {
                  if (na >= 0) {
                    Array ga = Array::Zero(da->size());
                    for (Index i = 0; i < d.batch; ++i) {
                      CMapM G(gout.data() + i * d.m * d.p, d.m, d.p);
                      CMapM B(db->data() + (d.b_shared ? 0 : i) * d.k * d.p, d.k, d.p);
                      MapM GA(ga.data() + (d.a_shared ? 0 : i) * d.m * d.k, d.m, d.k);
                      GA.noalias() += G * B.transpose();
                    }
                    t.accumulate(na, ga);
                  }
                  if (nb >= 0) {
                    Array gb = Array::Zero(db->size());
                    for (Index i = 0; i < d.batch; ++i) {
                      CMapM G(gout.data() + i * d.m * d.p, d.m, d.p);
                      CMapM A(da->data() + (d.a_shared ? 0 : i) * d.m * d.k, d.m, d.k);
                      MapM GB(gb.data() + (d.b_shared ? 0 : i) * d.k * d.p, d.k, d.p);
                      GB.noalias() += A.transpose() * G;
                    }
                    t.accumulate(nb, gb);
                  }
                });
}

Tensor attn_mix(const Tensor& weights, const Tensor& values) {
  const Shape& sw = weights.shape();
  const Shape& sv = values.shape();
  if (sw.size() < 2 || sv.size() != sw.size()) dim_error("attn_mix", sw, sv);
  const Index n = sw[sw.size() - 1];
  const Index c = sv[sv.size() - 1];
  if (sw[sw.size() - 2] != n || sv[sv.size() - 2] != n ||
      !std::equal(sw.begin(), sw.end() - 2, sv.begin())) {
    dim_error("attn_mix", sw, sv);
  }
  const Index batch = leading_product(sw, sw.size() - 2);
  count_macs(static_cast<std::uint64_t>(batch) * n * n * c);
  Shape out_shape(sw.begin(), sw.end() - 1);
  out_shape.push_back(c);
  auto out = std::make_shared<Array>(batch * n * c);
  {
    std::vector<double> buf(static_cast<std::size_t>(n));
    const double* pw = weights.array().data();
    const double* pv = values.array().data();
    for (Index b = 0; b < batch; ++b) {
      const double* W = pw + b * n * n;
      const double* V = pv + b * n * c;
      double* O = out->data() + b * n * c;
      for (Index i = 0; i < n; ++i) {
        for (Index k = 0; k < c; ++k) {
          for (Index j = 0; j < n; ++j) buf[static_cast<std::size_t>(j)] = W[i * n + j] * V[j * c + k];
          O[i * c + k] = ordered_sum(buf.data(), n);
        }
      }
    }
  }
  Tape* tape = common_tape({&weights, &values});
  const int nw = weights.node(), nv = values.node();
  auto dw = weights.data(), dv = values.data();
  return finish(std::move(out_shape), std::move(out), tape, {&weights, &values},
                [batch, n, c, nw, nv, dw, dv](Tape& t, const Array& gout) {
                  if (nw >= 0) {
                    Array gw = Array::Zero(dw->size());
                    for (Index b = 0; b < batch; ++b) {
                      CMapM G(gout.data() + b * n * c, n, c);
                      CMapM V(dv->data() + b * n * c, n, c);
                      MapM GW(gw.data() + b * n * n, n, n);
                      GW.noalias() = G * V.transpose();
                    }
                    t.accumulate(nw, gw);
                  }
                  if (nv >= 0) {
                    Array gv = Array::Zero(dv->size());
                    for (Index b = 0; b < batch; ++b) {
                      CMapM G(gout.data() + b * n * c, n, c);
                      CMapM W(dw->data() + b * n * n, n, n);
                      MapM GV(gv.data() + b * n * c, n, c);
                      GV.noalias() = W.transpose() * G;
                    }
                    t.accumulate(nv, gv);
                  }
                });
}

namespace {

enum class AddMode { Plus, Minus };

Tensor add_like(const Tensor& a, const Tensor& b, AddMode mode) {
  const char* op = mode == AddMode::Plus ? "add" : "sub";
  if (!is_suffix(a.shape(), b.shape())) dim_error(op, a.shape(), b.shape());
  const Index nb = b.numel();
  const Index outer = a.numel() / nb;
  auto out = std::make_shared<Array>(a.numel());
  {
    Eigen::Map<const Array> bm(b.array().data(), nb);
    for (Index o = 0; o < outer; ++o) {
      Eigen::Map<const Array> am(a.array().data() + o * nb, nb);
      Eigen::Map<Array> om(out->data() + o * nb, nb);
      if (mode == AddMode::Plus) {
        om = am + bm;
      } else {
        om = am - bm;
      }
    }
  }
  Tape* tape = common_tape({&a, &b});
  const int na = a.node(), nbn = b.node();
  const double sign = mode == AddMode::Plus ? 1.0 : -1.0;
  return finish(a.shape(), std::move(out), tape, {&a, &b},
                [na, nbn, nb, outer, sign](Tape& t, const Array& gout) {
                  if (na >= 0) t.accumulate(na, gout);
                  if (nbn >= 0) {
                    Array gb = Array::Zero(nb);
                    for (Index o = 0; o < outer; ++o) {
                      gb += Eigen::Map<const Array>(gout.data() + o * nb, nb);
                    }
                    if (sign < 0) gb = -gb;
                    t.accumulate(nbn, gb);
                  }
                });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_like(a, b, AddMode::Plus); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_like(a, b, AddMode::Minus); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dim_error("mul", a.shape(), b.shape());
  auto out = std::make_shared<Array>(a.array() * b.array());
  Tape* tape = common_tape({&a, &b});
  const int na = a.node(), nb = b.node();
  auto da = a.data(), db = b.data();
  return finish(a.shape(), std::move(out), tape, {&a, &b},
                [na, nb, da, db](Tape& t, const Array& g) {
                  if (na >= 0) t.accumulate(na, Array(g * *db));
                  if (nb >= 0) t.accumulate(nb, Array(g * *da));
                });
}

Tensor div(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dim_error("div", a.shape(), b.shape());
  auto out = std::make_shared<Array>(a.array() / b.array());
  Tape* tape = common_tape({&a, &b});
  const int na = a.node(), nb = b.node();
  auto da = a.data(), db = b.data();
  auto res = out;
  return finish(a.shape(), std::move(out), tape, {&a, &b},
                [na, nb, da, db, res](Tape& t, const Array& g) {
                  if (na >= 0) t.accumulate(na, Array(g / *db));
                  if (nb >= 0) t.accumulate(nb, Array(-g * *res / *db));
                });
}

Tensor scalar_mul(const Tensor& x, double c) {
  auto out = std::make_shared<Array>(x.array() * c);
  Tape* tape = common_tape({&x});
  const int nx = x.node();
  return finish(x.shape(), std::move(out), tape, {&x},
                [nx, c](Tape& t, const Array& g) {
                  if (nx >= 0) t.accumulate(nx, Array(g * c));
                });
}

Tensor scalar_add(const Tensor& x, double c) {
  auto out = std::make_shared<Array>(x.array() + c);
  Tape* tape = common_tape({&x});
  const int nx = x.node();
  return finish(x.shape(), std::move(out), tape, {&x},
                [nx](Tape& t, const Array& g) {
                  if (nx >= 0) t.accumulate(nx, g);
                });
}

Tensor scale_last(const Tensor& x, const Tensor& s) {
  if (s.rank() != x.rank() || s.shape() != replace_last(x.shape(), 1)) {
    dim_error("scale_last", x.shape(), s.shape());
  }
  const Index last = x.shape().back();
  const Index rows = x.numel() / last;
  auto out = std::make_shared<Array>(x.numel());
  for (Index r = 0; r < rows; ++r) {
    Eigen::Map<Array>(out->data() + r * last, last) =
        Eigen::Map<const Array>(x.array().data() + r * last, last) * s.array()[r];
  }
  Tape* tape = common_tape({&x, &s});
  const int nx = x.node(), ns = s.node();
  auto dx = x.data(), ds = s.data();
  return finish(x.shape(), std::move(out), tape, {&x, &s},
                [nx, ns, dx, ds, rows, last](Tape& t, const Array& g) {
                  if (nx >= 0) {
                    Array gx(g.size());
                    for (Index r = 0; r < rows; ++r) {
                      Eigen::Map<Array>(gx.data() + r * last, last) =
                          Eigen::Map<const Array>(g.data() + r * last, last) * (*ds)[r];
                    }
                    t.accumulate(nx, gx);
                  }
                  if (ns >= 0) {
                    Array gs(rows);
                    for (Index r = 0; r < rows; ++r) {
                      gs[r] = (Eigen::Map<const Array>(g.data() + r * last, last) *
                               Eigen::Map<const Array>(dx->data() + r * last, last))
                                  .sum();
                    }
                    t.accumulate(ns, gs);
                  }
                });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& x, Fwd fwd, Bwd bwd) {
  auto out = std::make_shared<Array>(fwd(x.array()));
  Tape* tape = common_tape({&x});
  const int nx = x.node();
  auto dx = x.data();
  auto res = out;
  return finish(x.shape(), std::move(out), tape, {&x},
                [nx, dx, res, bwd](Tape& t, const Array& g) {
                  if (nx >= 0) t.accumulate(nx, Array(bwd(g, *dx, *res)));
                });
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      x, [](const Array& v) { return Array(v.max(0.0)); },
      [](const Array& g, const Array& v, const Array&) { return (v > 0.0).select(g, 0.0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      x, [](const Array& v) { return Array(1.0 / (1.0 + (-v).exp())); },
      [](const Array& g, const Array&, const Array& y) { return g * y * (1.0 - y); });
}

Tensor sqrt(const Tensor& x) {
  if ((x.array() < 0.0).any()) throw NumericError("sqrt: negative input");
  return unary_elementwise(
      x, [](const Array& v) { return Array(v.sqrt()); },
      [](const Array& g, const Array&, const Array& y) { return 0.5 * g / y; });
}

Tensor rsqrt(const Tensor& x) {
  if ((x.array() <= 0.0).any()) throw NumericError("rsqrt: non-positive input");
  return unary_elementwise(
      x, [](const Array& v) { return Array(v.rsqrt()); },
      [](const Array& g, const Array& v, const Array& y) { return -0.5 * g * y / v; });
}

Tensor log(const Tensor& x) {
  if ((x.array() <= 0.0).any()) throw NumericError("log: non-positive input");
  return unary_elementwise(
      x, [](const Array& v) { return Array(v.log()); },
      [](const Array& g, const Array& v, const Array&) { return g / v; });
}

Tensor sin(const Tensor& x) {
  return unary_elementwise(
      x, [](const Array& v) { return Array(v.sin()); },
      [](const Array& g, const Array& v, const Array&) { return g * v.cos(); });
}

Tensor cos(const Tensor& x) {
  return unary_elementwise(
      x, [](const Array& v) { return Array(v.cos()); },
      [](const Array& g, const Array& v, const Array&) { return -g * v.sin(); });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("softmax_rows: rank-0 input");
  if (x.array().hasNaN()) throw NumericError("softmax_rows: NaN input");
  const Index last = x.shape().back();
  const Index rows = x.numel() / last;
  auto out = std::make_shared<Array>(x.numel());
  {
    std::vector<double> buf(static_cast<std::size_t>(last));
    const double* px = x.array().data();
    for (Index r = 0; r < rows; ++r) {
      const double* row = px + r * last;
      double m = row[0];
      for (Index i = 1; i < last; ++i) m = std::max(m, row[i]);
      for (Index i = 0; i < last; ++i) buf[static_cast<std::size_t>(i)] = std::exp(row[i] - m);
      // Canonical-order normalizer keeps the op permutation-equivariant at
      // the bit level.
      std::vector<double> terms(buf);
      const double denom = ordered_sum(terms.data(), last);
      double* o = out->data() + r * last;
      for (Index i = 0; i < last; ++i) o[i] = buf[static_cast<std::size_t>(i)] / denom;
    }
  }
  Tape* tape = common_tape({&x});
  const int nx = x.node();
  auto res = out;
  return finish(x.shape(), std::move(out), tape, {&x},
                [nx, res, rows, last](Tape& t, const Array& g) {
                  if (nx < 0) return;
                  Array gx(g.size());
                  for (Index r = 0; r < rows; ++r) {
                    Eigen::Map<const Array> y(res->data() + r * last, last);
                    Eigen::Map<const Array> gr(g.data() + r * last, last);
                    const double dot = (gr * y).sum();
                    Eigen::Map<Array>(gx.data() + r * last, last) = y * (gr - dot);
                  }
                  t.accumulate(nx, gx);
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    dim_error("layer_norm", x.shape(), gain.shape());
  }
  const Index rows = x.numel() / d;
  auto out = std::make_shared<Array>(x.numel());
  auto xhat = std::make_shared<Array>(x.numel());
  auto inv_std = std::make_shared<Array>(rows);
  {
    // Scalar ascending-order statistics: a row's bits depend only on the row
    // content, not its position (see matmul_block).
    for (Index r = 0; r < rows; ++r) {
      const double* row = x.array().data() + r * d;
      double sum = 0.0;
      for (Index i = 0; i < d; ++i) sum += row[i];
      const double mu = sum / static_cast<double>(d);
      double var_sum = 0.0;
      for (Index i = 0; i < d; ++i) var_sum += (row[i] - mu) * (row[i] - mu);
      const double s = 1.0 / std::sqrt(var_sum / static_cast<double>(d) + eps);
      (*inv_std)[r] = s;
      double* xh = xhat->data() + r * d;
      double* o = out->data() + r * d;
      for (Index i = 0; i < d; ++i) {
        xh[i] = (row[i] - mu) * s;
        o[i] = xh[i] * gain.array()[i] + bias.array()[i];
      }
    }
  }
  Tape* tape = common_tape({&x, &gain, &bias});
  const int nx = x.node(), ng = gain.node(), nb = bias.node();
  auto dgain = gain.data();
  return finish(x.shape(), std::move(out), tape, {&x, &gain, &bias},
                [nx, ng, nb, dgain, xhat, inv_std, rows, d](Tape& t, const Array& g) {
                  if (nx >= 0) {
                    Array gx(g.size());
                    for (Index r = 0; r < rows; ++r) {
                      Eigen::Map<const Array> gr(g.data() + r * d, d);
                      Eigen::Map<const Array> xh(xhat->data() + r * d, d);
                      const Array gh = gr * *dgain;
                      const double m1 = gh.mean();
                      const double m2 = (gh * xh).mean();
                      Eigen::Map<Array>(gx.data() + r * d, d) = (*inv_std)[r] * (gh - m1 - xh * m2);
                    }
                    t.accumulate(nx, gx);
                  }
                  if (ng >= 0) {
                    Array gg = Array::Zero(d);
                    for (Index r = 0; r < rows; ++r) {
                      gg += Eigen::Map<const Array>(g.data() + r * d, d) *
                            Eigen::Map<const Array>(xhat->data() + r * d, d);
                    }
                    t.accumulate(ng, gg);
                  }
                  if (nb >= 0) {
                    Array gb = Array::Zero(d);
                    for (Index r = 0; r < rows; ++r) {
                      gb += Eigen::Map<const Array>(g.data() + r * d, d);
                    }
                    t.accumulate(nb, gb);
                  }
                });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (numel_of(new_shape) != x.numel()) {
    dim_error("reshape", x.shape(), new_shape);
  }
  Tape* tape = common_tape({&x});
  const int nx = x.node();
  // Row-major data order is preserved; the storage is shared.
  return finish(std::move(new_shape), std::make_shared<Array>(x.array()), tape, {&x},
                [nx](Tape& t, const Array& g) {
                  if (nx >= 0) t.accumulate(nx, g);
                });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expects rank 2, got " + shape_str(x.shape()));
  return permute_axes(x, {1, 0});
}

namespace {

// out[multi] = in[multi o perm]; used forward and (with roles swapped) backward.
void permute_copy(const double* in, double* out, const Shape& out_shape,
                  const std::vector<Index>& in_stride_for_out_axis) {
  const std::size_t rank = out_shape.size();
  std::vector<Index> idx(rank, 0);
  const Index total = numel_of(out_shape);
  Index in_off = 0;
  for (Index flat = 0; flat < total; ++flat) {
    out[flat] = in[in_off];
    for (std::size_t a = rank; a-- > 0;) {
      ++idx[a];
      in_off += in_stride_for_out_axis[a];
      if (idx[a] < out_shape[a]) break;
      in_off -= in_stride_for_out_axis[a] * out_shape[a];
      idx[a] = 0;
    }
  }
}

}  // namespace

Tensor permute_axes(const Tensor& x, const std::vector<Index>& perm) {
  const std::size_t rank = x.shape().size();
  if (perm.size() != rank) throw DimensionError("permute_axes: bad permutation for " + shape_str(x.shape()));
  std::vector<bool> seen(rank, false);
  for (Index p : perm) {
    if (p < 0 || p >= static_cast<Index>(rank) || seen[static_cast<std::size_t>(p)]) {
      throw DimensionError("permute_axes: bad permutation for " + shape_str(x.shape()));
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
  std::vector<Index> in_strides(rank, 1);
  for (std::size_t a = rank - 1; a-- > 0;) in_strides[a] = in_strides[a + 1] * x.shape()[a + 1];
  Shape out_shape(rank);
  std::vector<Index> stride_for_out(rank);
  for (std::size_t a = 0; a < rank; ++a) {
    out_shape[a] = x.shape()[static_cast<std::size_t>(perm[a])];
    stride_for_out[a] = in_strides[static_cast<std::size_t>(perm[a])];
  }
  auto out = std::make_shared<Array>(x.numel());
  permute_copy(x.array().data(), out->data(), out_shape, stride_for_out);

  Tape* tape = common_tape({&x});
  const int nx = x.node();
  const Shape in_shape = x.shape();
  // Inverse permutation routes gradients back.
  std::vector<Index> inv(rank);
  for (std::size_t a = 0; a < rank; ++a) inv[static_cast<std::size_t>(perm[a])] = static_cast<Index>(a);
  return finish(std::move(out_shape), std::move(out), tape, {&x},
                [nx, in_shape, inv](Tape& t, const Array& g) {
                  if (nx < 0) return;
                  const std::size_t rank = in_shape.size();
                  std::vector<Index> g_strides(rank, 1);
                  Shape g_shape(rank);
                  // g has the output shape = in_shape permuted.
                  for (std::size_t a = 0; a < rank; ++a) g_shape[a] = in_shape[static_cast<std::size_t>(a)];
                  // Build strides of g (output layout) indexed by output axes.
                  Shape out_shape(rank);
                  for (std::size_t a = 0; a < rank; ++a) {
                    out_shape[static_cast<std::size_t>(inv[a])] = in_shape[a];
                  }
                  std::vector<Index> out_strides(rank, 1);
                  for (std::size_t a = rank - 1; a-- > 0;) out_strides[a] = out_strides[a + 1] * out_shape[a + 1];
                  std::vector<Index> stride_for_in(rank);
                  for (std::size_t a = 0; a < rank; ++a) {
                    stride_for_in[a] = out_strides[static_cast<std::size_t>(inv[a])];
                  }
                  Array gx(g.size());
                  permute_copy(g.data(), gx.data(), in_shape, stride_for_in);
                  t.accumulate(nx, gx);
                });
}

Tensor concat(const std::vector<Tensor>& parts, Index axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  const Shape& first = parts.front().shape();
  const std::size_t rank = first.size();
  if (axis < 0 || axis >= static_cast<Index>(rank)) {
    throw DimensionError("concat: axis out of range for " + shape_str(first));
  }
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != rank) dim_error("concat", first, p.shape());
    for (std::size_t a = 0; a < rank; ++a) {
      if (a != static_cast<std::size_t>(axis) && p.shape()[a] != first[a]) dim_error("concat", first, p.shape());
    }
    out_shape[static_cast<std::size_t>(axis)] += p.shape()[static_cast<std::size_t>(axis)];
  }
  Index outer = 1, inner = 1;
  for (std::size_t a = 0; a < static_cast<std::size_t>(axis); ++a) outer *= first[a];
  for (std::size_t a = static_cast<std::size_t>(axis) + 1; a < rank; ++a) inner *= first[a];
  auto out = std::make_shared<Array>(numel_of(out_shape));
  const Index out_slab = out_shape[static_cast<std::size_t>(axis)] * inner;
  {
    Index off = 0;
    for (const Tensor& p : parts) {
      const Index slab = p.shape()[static_cast<std::size_t>(axis)] * inner;
      for (Index o = 0; o < outer; ++o) {
        std::copy_n(p.array().data() + o * slab, slab, out->data() + o * out_slab + off);
      }
      off += slab;
    }
  }
  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    Tape* pt = common_tape({&p});
    if (pt != nullptr) {
      if (tape != nullptr && tape != pt) throw std::logic_error("operands recorded on different tapes");
      tape = pt;
    }
  }
  if (tape == nullptr) return Tensor(std::move(out_shape), std::move(out));
  std::vector<int> pnodes;
  std::vector<Index> slabs;
  for (const Tensor& p : parts) {
    pnodes.push_back(p.node());
    slabs.push_back(p.shape()[static_cast<std::size_t>(axis)] * inner);
  }
  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  // record() takes an initializer_list; validate parents manually here.
  Tensor result = tape->record(std::move(out_shape), std::move(out), {},
                               [pnodes, slabs, outer, out_slab](Tape& t, const Array& g) {
                                 Index off = 0;
                                 for (std::size_t pi = 0; pi < pnodes.size(); ++pi) {
                                   const Index slab = slabs[pi];
                                   if (pnodes[pi] >= 0) {
                                     Array gp(outer * slab);
                                     for (Index o = 0; o < outer; ++o) {
                                       std::copy_n(g.data() + o * out_slab + off, slab, gp.data() + o * slab);
                                     }
                                     t.accumulate(pnodes[pi], gp);
                                   }
                                   off += slab;
                                 }
                               });
  return result;
}

Tensor slice(const Tensor& x, Index axis, Index start, Index len) {
  const std::size_t rank = x.shape().size();
  if (axis < 0 || axis >= static_cast<Index>(rank)) {
    throw DimensionError("slice: axis out of range for " + shape_str(x.shape()));
  }
  const Index extent = x.shape()[static_cast<std::size_t>(axis)];
  if (start < 0 || len <= 0 || start + len > extent) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of bounds for " + shape_str(x.shape()));
  }
  Index outer = 1, inner = 1;
  for (std::size_t a = 0; a < static_cast<std::size_t>(axis); ++a) outer *= x.shape()[a];
  for (std::size_t a = static_cast<std::size_t>(axis) + 1; a < rank; ++a) inner *= x.shape()[a];
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  auto out = std::make_shared<Array>(outer * len * inner);
  for (Index o = 0; o < outer; ++o) {
    std::copy_n(x.array().data() + (o * extent + start) * inner, len * inner, out->data() + o * len * inner);
  }
  Tape* tape = common_tape({&x});
  const int nx = x.node();
  const Index xnumel = x.numel();
  return finish(std::move(out_shape), std::move(out), tape, {&x},
                [nx, outer, inner, extent, start, len, xnumel](Tape& t, const Array& g) {
                  if (nx < 0) return;
                  Array gx = Array::Zero(xnumel);
                  for (Index o = 0; o < outer; ++o) {
                    Eigen::Map<Array>(gx.data() + (o * extent + start) * inner, len * inner) +=
                        Eigen::Map<const Array>(g.data() + o * len * inner, len * inner);
                  }
                  t.accumulate(nx, gx);
                });
}

Tensor sum_all(const Tensor& x) {
  auto out = std::make_shared<Array>(1);
  (*out)[0] = x.array().sum();
  Tape* tape = common_tape({&x});
  const int nx = x.node();
  const Index n = x.numel();
  return finish({1}, std::move(out), tape, {&x},
                [nx, n](Tape& t, const Array& g) {
                  if (nx >= 0) t.accumulate(nx, Array(Array::Constant(n, g[0])));
                });
}

Tensor row_sums(const Tensor& x) {
  const Index last = x.shape().back();
  const Index rows = x.numel() / last;
  auto out = std::make_shared<Array>(rows);
  for (Index r = 0; r < rows; ++r) {
    (*out)[r] = Eigen::Map<const Array>(x.array().data() + r * last, last).sum();
  }
  Tape* tape = common_tape({&x});
  const int nx = x.node();
  return finish(replace_last(x.shape(), 1), std::move(out), tape, {&x},
                [nx, rows, last](Tape& t, const Array& g) {
                  if (nx < 0) return;
                  Array gx(rows * last);
                  for (Index r = 0; r < rows; ++r) {
                    Eigen::Map<Array>(gx.data() + r * last, last).setConstant(g[r]);
                  }
                  t.accumulate(nx, gx);
                });
}

Tensor broadcast_axis(const Tensor& x, Index axis, Index times) {
  const std::size_t rank = x.shape().size();
  if (axis < 0 || axis > static_cast<Index>(rank) || times <= 0) {
    throw DimensionError("broadcast_axis: bad axis/times for " + shape_str(x.shape()));
  }
  Index outer = 1, inner = 1;
  for (std::size_t a = 0; a < static_cast<std::size_t>(axis); ++a) outer *= x.shape()[a];
  for (std::size_t a = static_cast<std::size_t>(axis); a < rank; ++a) inner *= x.shape()[a];
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin() + axis, times);
  auto out = std::make_shared<Array>(outer * times * inner);
  for (Index o = 0; o < outer; ++o) {
    for (Index r = 0; r < times; ++r) {
      std::copy_n(x.array().data() + o * inner, inner, out->data() + (o * times + r) * inner);
    }
  }
  Tape* tape = common_tape({&x});
  const int nx = x.node();
  return finish(std::move(out_shape), std::move(out), tape, {&x},
                [nx, outer, times, inner](Tape& t, const Array& g) {
                  if (nx < 0) return;
                  Array gx = Array::Zero(outer * inner);
                  for (Index o = 0; o < outer; ++o) {
                    for (Index r = 0; r < times; ++r) {
                      Eigen::Map<Array>(gx.data() + o * inner, inner) +=
                          Eigen::Map<const Array>(g.data() + (o * times + r) * inner, inner);
                    }
                  }
                  t.accumulate(nx, gx);
                });
}

Tensor interleave2(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dim_error("interleave2", a.shape(), b.shape());
  const Index last = a.shape().back();
  const Index rows = a.numel() / last;
  auto out = std::make_shared<Array>(2 * a.numel());
  for (Index r = 0; r < rows; ++r) {
    const double* pa = a.array().data() + r * last;
    const double* pb = b.array().data() + r * last;
    double* o = out->data() + r * 2 * last;
    for (Index i = 0; i < last; ++i) {
      o[2 * i] = pa[i];
      o[2 * i + 1] = pb[i];
    }
  }
  Tape* tape = common_tape({&a, &b});
  const int na = a.node(), nb = b.node();
  const Index n = a.numel();
  return finish(replace_last(a.shape(), 2 * last), std::move(out), tape, {&a, &b},
                [na, nb, n](Tape& t, const Array& g) {
                  if (na >= 0) {
                    Array ga(n);
                    for (Index i = 0; i < n; ++i) ga[i] = g[2 * i];
                    t.accumulate(na, ga);
                  }
                  if (nb >= 0) {
                    Array gb(n);
                    for (Index i = 0; i < n; ++i) gb[i] = g[2 * i + 1];
                    t.accumulate(nb, gb);
                  }
                });
}

namespace {

Tensor deinterleave(const Tensor& x, int phase) {
  const Index last = x.shape().back();
  if (last % 2 != 0) throw DimensionError("deinterleave: odd last extent in " + shape_str(x.shape()));
  const Index half = last / 2;
  const Index rows = x.numel() / last;
  auto out = std::make_shared<Array>(x.numel() / 2);
  for (Index r = 0; r < rows; ++r) {
    const double* px = x.array().data() + r * last;
    double* o = out->data() + r * half;
    for (Index i = 0; i < half; ++i) o[i] = px[2 * i + phase];
  }
  Tape* tape = common_tape({&x});
  const int nx = x.node();
  const Index n = x.numel();
  return finish(replace_last(x.shape(), half), std::move(out), tape, {&x},
                [nx, n, phase](Tape& t, const Array& g) {
                  if (nx < 0) return;
                  Array gx = Array::Zero(n);
                  for (Index i = 0; i < n / 2; ++i) gx[2 * i + phase] = g[i];
                  t.accumulate(nx, gx);
                });
}

}  // namespace

Tensor deinterleave_even(const Tensor& x) { return deinterleave(x, 0); }
Tensor deinterleave_odd(const Tensor& x) { return deinterleave(x, 1); }

Tensor ste_quantize(const Tensor& x, int bits) {
  if (bits < 1 || bits > 40) throw ConfigError("ste_quantize: bits must be in [1, 40]");
  if ((x.array() < 0.0).any() || (x.array() > 1.0).any()) {
    throw DomainError("ste_quantize: input outside [0, 1]");
  }
  const double levels = std::ldexp(1.0, bits);
  auto out = std::make_shared<Array>(x.numel());
  for (Index i = 0; i < x.numel(); ++i) {
    const double cell = std::min(std::floor(x.array()[i] * levels), levels - 1.0);
    (*out)[i] = (cell + 0.5) / levels;
  }
  Tape* tape = common_tape({&x});
  const int nx = x.node();
  if (tape != nullptr) tape->note_straight_through();
  return finish(x.shape(), std::move(out), tape, {&x},
                [nx](Tape& t, const Array& g) {
                  if (nx >= 0) t.accumulate(nx, g);  // straight-through
                });
}

void mac_counter_reset() { g_mac_count.store(0, std::memory_order_relaxed); }
std::uint64_t mac_counter_value() { return g_mac_count.load(std::memory_order_relaxed); }

}  // namespace mtwb
