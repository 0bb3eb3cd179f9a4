// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mtwb/adam.hpp"
#include "mtwb/checkpoint.hpp"
#include "mtwb/finite_diff.hpp"
#include "mtwb/rng.hpp"
#include "mtwb/tensor.hpp"

using namespace mtwb;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Array a(numel_of(shape));
  for (Index i = 0; i < a.size(); ++i) a[i] = scale * rng.normal();
  return Tensor::from_array(std::move(shape), std::move(a));
}

}  // namespace

TEST_CASE("matmul identity and hand-checked cases") {
  const Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  const Tensor i2 = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  const Tensor c = matmul(i2, a);
  for (Index i = 0; i < 4; ++i) CHECK(c.array()[i] == a.array()[i]);

  const Tensor row = Tensor::from_values({1, 2}, {1, 2});
  const Tensor col = Tensor::from_values({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 2});
  try {
    (void)matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches central finite differences") {
  Rng rng(42);
  const Tensor b = random_tensor({3, 5}, rng);
  auto f = [&](const Tensor& x) { return sum_all(mul(matmul(x, b), matmul(x, b))); };
  const auto rep = finite_diff_check(f, random_tensor({4, 3}, rng));
  CHECK(rep.max_rel_error < 1e-6);

  auto g = [&](const Tensor& x) { return sum_all(matmul(Tensor::full({2, 4}, 0.5), x)); };
  CHECK(finite_diff_check(g, random_tensor({4, 3}, rng)).max_rel_error < 1e-6);
}

TEST_CASE("batched matmul with shared weight matches per-sample products") {
  Rng rng(7);
  const Tensor x = random_tensor({3, 2, 4}, rng);
  const Tensor w = random_tensor({4, 5}, rng);
  const Tensor y = matmul(x, w);
  REQUIRE(y.shape() == Shape{3, 2, 5});
  for (Index b = 0; b < 3; ++b) {
    const Tensor xb = slice(x, 0, b, 1);
    const Tensor yb = matmul(reshape(xb, {2, 4}), w);
    for (Index i = 0; i < 10; ++i) {
      CHECK(y.array()[b * 10 + i] == yb.array()[i]);
    }
  }
}

TEST_CASE("elementwise and shape ops") {
  const Tensor r = relu(Tensor::from_values({3}, {-1, 0, 2}));
  CHECK(r.array()[0] == 0.0);
  CHECK(r.array()[1] == 0.0);
  CHECK(r.array()[2] == 2.0);

  const Tensor m = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor rs = reshape(m, {3, 2});
  for (Index i = 0; i < 6; ++i) CHECK(rs.array()[i] == m.array()[i]);  // row-major order kept

  const Tensor c = concat({Tensor::zeros({2, 3}), Tensor::full({2, 5}, 1.0)}, 1);
  CHECK(c.shape() == Shape{2, 8});
  CHECK(c.at({0, 2}) == 0.0);
  CHECK(c.at({0, 3}) == 1.0);

  const Tensor p = permute_axes(m, {1, 0});
  CHECK(p.at({2, 1}) == m.at({1, 2}));

  const Tensor sl = slice(m, 1, 1, 2);
  CHECK(sl.shape() == Shape{2, 2});
  CHECK(sl.at({1, 0}) == 5.0);
}

TEST_CASE("interleave round trip and gradient routing") {
  Rng rng(3);
  const Tensor a = random_tensor({2, 3}, rng);
  const Tensor b = random_tensor({2, 3}, rng);
  const Tensor il = interleave2(a, b);
  CHECK(il.shape() == Shape{2, 6});
  const Tensor ea = deinterleave_even(il);
  const Tensor ob = deinterleave_odd(il);
  for (Index i = 0; i < 6; ++i) {
    CHECK(ea.array()[i] == a.array()[i]);
    CHECK(ob.array()[i] == b.array()[i]);
  }
  auto f = [&](const Tensor& x) {
    const Tensor mixed = interleave2(x, scalar_mul(x, 2.0));
    return sum_all(mul(mixed, mixed));
  };
  CHECK(finite_diff_check(f, random_tensor({2, 3}, rng)).max_rel_error < 1e-6);
}

TEST_CASE("softmax rows: symmetry, stability, high-precision oracle") {
  const Tensor flat = softmax_rows(Tensor::zeros({1, 3}));
  for (Index i = 0; i < 3; ++i) CHECK(flat.array()[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));

  const Tensor big = softmax_rows(Tensor::from_values({1, 2}, {1000, 0}));
  CHECK(std::isfinite(big.array()[0]));
  CHECK(big.array()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(big.array()[1] == doctest::Approx(0.0).epsilon(1e-12));

  // Values from tests/oracles/softmax_oracle.py (60-digit arithmetic).
  const Tensor y = softmax_rows(Tensor::from_values({1, 3}, {1, 2, 3}));
  CHECK(std::abs(y.array()[0] - 0.090030573170380457998) < 1e-12);
  CHECK(std::abs(y.array()[1] - 0.24472847105479765247) < 1e-12);
  CHECK(std::abs(y.array()[2] - 0.66524095577482188953) < 1e-12);

  CHECK_THROWS_AS((void)softmax_rows(Tensor::from_values({1, 2}, {std::nan(""), 0.0})),
                  NumericError);
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({4, 7}, rng, 3.0);
    const Tensor y = softmax_rows(x);
    for (Index r = 0; r < 4; ++r) {
      double s = 0.0;
      for (Index i = 0; i < 7; ++i) s += y.array()[r * 7 + i];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    const Tensor shifted = softmax_rows(scalar_add(x, 17.0));
    for (Index i = 0; i < y.numel(); ++i) {
      CHECK(std::abs(shifted.array()[i] - y.array()[i]) < 1e-12);
    }
  }
}

TEST_CASE("layer norm examples and gradient") {
  const Tensor gain = Tensor::full({4}, 1.0);
  const Tensor bias = Tensor::zeros({4});
  const Tensor constant = layer_norm(Tensor::full({1, 4}, 5.0), gain, bias, 1e-6);
  for (Index i = 0; i < 4; ++i) CHECK(std::abs(constant.array()[i]) < 1e-9);

  const Tensor two = layer_norm(Tensor::from_values({1, 2}, {1, 3}), Tensor::full({2}, 1.0),
                                Tensor::zeros({2}), 0.0);
  CHECK(two.array()[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(two.array()[1] == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(5);
  const Tensor g = random_tensor({8}, rng);
  const Tensor b = random_tensor({8}, rng);
  auto f = [&](const Tensor& x) {
    const Tensor y = layer_norm(x, g, b, 1e-6);
    return sum_all(mul(y, y));
  };
  CHECK(finite_diff_check(f, random_tensor({3, 8}, rng)).max_rel_error < 1e-5);

  // gain/bias gradients
  const Tensor x = random_tensor({3, 8}, rng);
  auto fg = [&](const Tensor& gg) { return sum_all(mul(layer_norm(x, gg, b, 1e-6), layer_norm(x, gg, b, 1e-6))); };
  CHECK(finite_diff_check(fg, random_tensor({8}, rng)).max_rel_error < 1e-5);
}

TEST_CASE("backward: linear and quadratic losses") {
  {
    Tape tape;
    const Tensor x = tape.watch(Tensor::from_values({2, 2}, {1, -2, 3, 4}));
    tape.backward(sum_all(x));
    for (Index i = 0; i < 4; ++i) CHECK(tape.grad(x)[i] == 1.0);
  }
  {
    Tape tape;
    const Tensor x = tape.watch(Tensor::from_values({2, 2}, {1, -2, 3, 4}));
    tape.backward(scalar_mul(sum_all(mul(x, x)), 0.5));
    for (Index i = 0; i < 4; ++i) CHECK(tape.grad(x)[i] == x.array()[i]);
  }
}

TEST_CASE("backward misuse: non-scalar loss, consumed tape, mixed tapes") {
  Tape tape;
  const Tensor x = tape.watch(Tensor::zeros({2, 2}));
  CHECK_THROWS_AS(tape.backward(scalar_mul(x, 2.0)), DimensionError);

  Tape t2;
  const Tensor y = t2.watch(Tensor::full({2}, 1.0));
  const Tensor loss = sum_all(y);
  t2.backward(loss);
  CHECK_THROWS_AS(t2.backward(loss), std::logic_error);

  Tape ta, tb;
  const Tensor a = ta.watch(Tensor::full({2}, 1.0));
  const Tensor b = tb.watch(Tensor::full({2}, 1.0));
  CHECK_THROWS_AS((void)add(a, b), std::logic_error);
  CHECK_THROWS_AS((void)tb.watch(a), std::logic_error);
}

TEST_CASE("every tape is deterministic: identical forward gives identical grads") {
  auto run_once = [] {
    Rng rng(99);
    Tape tape;
    const Tensor x = tape.watch(random_tensor({4, 4}, rng));
    const Tensor w = random_tensor({4, 4}, rng);
    const Tensor y = softmax_rows(matmul(relu(x), w));
    tape.backward(sum_all(mul(y, y)));
    return Array(tape.grad(x));
  };
  const Array g1 = run_once();
  const Array g2 = run_once();
  for (Index i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("adam: fixed point, single-step size, quadratic descent") {
  ParamStore ps;
  ps.add("w", Tensor::from_values({2}, {1.5, -0.5}));
  AdamState st(ps, {});
  adam_step(ps, {Array::Zero(2)}, st);
  CHECK(ps.value(0).array()[0] == 1.5);
  CHECK(ps.value(0).array()[1] == -0.5);

  ParamStore one;
  one.add("w", Tensor::scalar(0.0));
  AdamState st1(one, AdamConfig{0.001, 0.9, 0.999, 1e-8});
  adam_step(one, {Array::Ones(1)}, st1);
  // Bias correction makes the first step lr * 1/(1 + eps).
  CHECK(std::abs(one.value(0).item() + 0.001) < 1e-10);
  CHECK(st1.step_count() == 1);

  ParamStore quad;
  quad.add("w", Tensor::scalar(0.0));
  AdamState st2(quad, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 200; ++i) {
    const double w = quad.value(0).item();
    Array g(1);
    g[0] = 2.0 * (w - 3.0);
    adam_step(quad, {g}, st2);
  }
  CHECK(std::abs(quad.value(0).item() - 3.0) < 0.01);
}

TEST_CASE("finite difference checker: polynomial and straight-through exclusion") {
  Rng rng(123);
  auto sq = [](const Tensor& x) { return sum_all(mul(x, x)); };
  CHECK(finite_diff_check(sq, random_tensor({5}, rng)).max_rel_error < 1e-8);

  auto with_quantizer = [](const Tensor& x) { return sum_all(ste_quantize(sigmoid(x), 4)); };
  const auto rep = finite_diff_check(with_quantizer, random_tensor({5}, rng));
  CHECK(rep.skipped_ste);
  CHECK(rep.max_rel_error == 0.0);
}

TEST_CASE("straight-through quantizer: forward codebook and identity gradient") {
  const Tensor s = Tensor::from_values({3}, {0.7, 0.0, 1.0});
  const Tensor q = ste_quantize(s, 1);
  CHECK(q.array()[0] == 0.75);
  CHECK(q.array()[1] == 0.25);
  CHECK(q.array()[2] == 0.75);

  Tape tape;
  const Tensor w = tape.watch(Tensor::from_values({4}, {0.1, 0.4, 0.6, 0.9}));
  tape.backward(sum_all(ste_quantize(w, 3)));
  for (Index i = 0; i < 4; ++i) CHECK(tape.grad(w)[i] == 1.0);
  CHECK(tape.saw_straight_through());

  CHECK_THROWS_AS((void)ste_quantize(Tensor::from_values({1}, {1.5}), 2), DomainError);
}

TEST_CASE("unary op gradients") {
  Rng rng(17);
  auto make_pos = [&](Index n) {
    Array a(n);
    for (Index i = 0; i < n; ++i) a[i] = 0.5 + rng.uniform();
    return Tensor::from_array({n}, std::move(a));
  };
  CHECK(finite_diff_check([](const Tensor& x) { return sum_all(mul(sigmoid(x), sigmoid(x))); },
                          random_tensor({6}, rng))
            .max_rel_error < 1e-6);
  CHECK(finite_diff_check([](const Tensor& x) { return sum_all(sqrt(x)); }, make_pos(6))
            .max_rel_error < 1e-6);
  CHECK(finite_diff_check([](const Tensor& x) { return sum_all(rsqrt(x)); }, make_pos(6))
            .max_rel_error < 1e-6);
  CHECK(finite_diff_check([](const Tensor& x) { return sum_all(log(x)); }, make_pos(6))
            .max_rel_error < 1e-6);
  CHECK(finite_diff_check([](const Tensor& x) { return sum_all(mul(sin(x), cos(x))); },
                          random_tensor({6}, rng))
            .max_rel_error < 1e-6);
  CHECK_THROWS_AS((void)sqrt(Tensor::from_values({1}, {-1.0})), NumericError);
  CHECK_THROWS_AS((void)log(Tensor::from_values({1}, {0.0})), NumericError);
}

TEST_CASE("checkpoint container round trip") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "mtwb_ckpt_test.mtwb";
  Rng rng(31);
  std::vector<std::pair<std::string, Tensor>> params;
  params.emplace_back("layer0.head1.wq", random_tensor({3, 4}, rng));
  params.emplace_back("embed.b", random_tensor({7}, rng));
  write_checkpoint(path, params);
  const auto back = read_checkpoint(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "layer0.head1.wq");
  CHECK(back[0].second.shape() == Shape{3, 4});
  for (Index i = 0; i < 12; ++i) CHECK(back[0].second.array()[i] == params[0].second.array()[i]);
  CHECK(back[1].first == "embed.b");
  for (Index i = 0; i < 7; ++i) CHECK(back[1].second.array()[i] == params[1].second.array()[i]);
  fs::remove(path);
}

TEST_CASE("rng streams are deterministic and independent") {
  Rng a(12345), b(12345);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng s0 = Rng::stream(7, 0);
  Rng s1 = Rng::stream(7, 1);
  CHECK(s0.next_u64() != s1.next_u64());

  Rng n1(5), n2(5);
  for (int i = 0; i < 50; ++i) CHECK(n1.normal() == n2.normal());
}
