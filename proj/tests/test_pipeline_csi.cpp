// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mtwb/finite_diff.hpp"
#include "mtwb/pipeline_csi.hpp"

using namespace mtwb;
namespace fs = std::filesystem;

namespace {

CsiConfig mini_csi_config() {
  CsiConfig cfg;
  cfg.channel = ChannelConfig::desk();
  cfg.codeword_len = 16;
  cfg.bits = 2;
  cfg.model_size = 'S';
  cfg.model_overrides.layers = 1;
  cfg.model_overrides.d_model = 32;
  cfg.model_overrides.heads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("quantizer hand-checked codewords") {
  Eigen::VectorXd s(1);
  s << 0.7;
  const auto bits1 = quantize(s, 1);
  REQUIRE(bits1.size() == 1);
  CHECK(bits1[0] == 1);
  CHECK(dequantize(bits1, 1)[0] == 0.75);

  s << 0.0;
  const auto bits2 = quantize(s, 2);
  REQUIRE(bits2.size() == 2);
  CHECK(bits2[0] == 0);
  CHECK(bits2[1] == 0);
  CHECK(dequantize(bits2, 2)[0] == 0.125);

  Eigen::VectorXd bad(1);
  bad << 1.2;
  CHECK_THROWS_AS((void)quantize(bad, 2), DomainError);
}

TEST_CASE("quantizer: exhaustive grid meets the half-step bound with equality at edges") {
  for (int bits = 1; bits <= 8; ++bits) {
    const double half_step = 1.0 / std::ldexp(1.0, bits + 1);
    double worst = 0.0;
    const int grid = 10000;
    for (int i = 0; i <= grid; ++i) {
      Eigen::VectorXd s(1);
      s << static_cast<double>(i) / grid;
      const double sh = dequantize(quantize(s, bits), bits)[0];
      worst = std::max(worst, std::abs(s[0] - sh));
      CHECK(std::abs(s[0] - sh) <= half_step + 1e-12);
    }
    // Grid point 0 sits on a cell edge, so the bound is met exactly.
    CHECK(worst == half_step);
  }
}

TEST_CASE("quantizer: codepoint idempotence for every level") {
  for (int bits = 1; bits <= 8; ++bits) {
    const int levels = 1 << bits;
    for (int cell = 0; cell < levels; ++cell) {
      std::vector<std::uint8_t> code(static_cast<std::size_t>(bits));
      for (int b = 0; b < bits; ++b) {
        code[static_cast<std::size_t>(b)] = static_cast<std::uint8_t>((cell >> (bits - 1 - b)) & 1);
      }
      const Eigen::VectorXd level = dequantize(code, bits);
      const auto re = quantize(level, bits);
      CHECK(re == code);
    }
  }
}

TEST_CASE("bitstream length and MSB-first byte packing") {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(20));
    const int bits = 1 + static_cast<int>(rng.below(8));
    Eigen::VectorXd s(n);
    for (int i = 0; i < n; ++i) s[i] = rng.uniform();
    const FeedbackCodeword cw = make_codeword(s, bits);
    CHECK(cw.bits.size() == static_cast<std::size_t>(n) * static_cast<std::size_t>(bits));
    CHECK((cw.analog - s).norm() == 0.0);
    const auto packed = pack_bitstream(cw.bits);
    CHECK(unpack_bitstream(packed, cw.bits.size()) == cw.bits);
  }
  // 10110010 -> 0xB2.
  const std::vector<std::uint8_t> eight{1, 0, 1, 1, 0, 0, 1, 0};
  CHECK(pack_bitstream(eight) == std::vector<std::uint8_t>{0xB2});
}

TEST_CASE("encoder output lives in (0,1) with the configured length, deterministically") {
  CsiConfig cfg = mini_csi_config();
  CsiTransformerModel model(cfg, 2);
  Rng rng(3);
  const ChannelSample s = gen_channel(cfg.channel, rng);
  const Eigen::VectorXd code = model.csi_encode(s.h);
  REQUIRE(code.size() == cfg.codeword_len);
  for (int i = 0; i < code.size(); ++i) {
    CHECK(code[i] > 0.0);
    CHECK(code[i] < 1.0);
  }
  CHECK((model.csi_encode(s.h) - code).norm() == 0.0);

  const Eigen::MatrixXcd h_hat = model.csi_decode(make_codeword(code, cfg.bits).dequantized);
  CHECK(h_hat.rows() == cfg.channel.subcarriers);
  CHECK(h_hat.cols() == cfg.channel.antennas());
  CHECK(h_hat.allFinite());
  CHECK((model.csi_decode(make_codeword(code, cfg.bits).dequantized) - h_hat).norm() == 0.0);
}

TEST_CASE("straight-through forward equals the quantize-dequantize chain") {
  Rng rng(4);
  Array vals(12);
  for (Index i = 0; i < 12; ++i) vals[i] = rng.uniform();
  const Tensor s = Tensor::from_array({12}, vals);
  const Tensor st = straight_through(s, 3);
  Eigen::VectorXd sv(12);
  for (Index i = 0; i < 12; ++i) sv[i] = vals[i];
  const Eigen::VectorXd expect = dequantize(quantize(sv, 3), 3);
  for (Index i = 0; i < 12; ++i) CHECK(st.array()[i] == expect[i]);
}

TEST_CASE("mini training: quantized autoencoder learns; orderings hold") {
  CsiConfig cfg = mini_csi_config();
  const fs::path dir = fs::temp_directory_path() / "mtwb_csi_mini";
  fs::create_directories(dir);
  gen_dataset(cfg.channel, 1200, 51, dir / "train.mtwc");
  gen_dataset(cfg.channel, 200, 52, dir / "val.mtwc");
  const Dataset train = Dataset::load(dir / "train.mtwc");
  const Dataset val = Dataset::load(dir / "val.mtwc");

  TrainConfig tc;
  tc.epochs = 15;
  tc.batch = 64;
  tc.patience = 15;
  tc.seed = 9;

  // Straight-through-trained model.
  CsiTransformerModel ste_model(cfg, 7);
  const double untrained = eval_csi_nmse(ste_model, val, true);
  const TrainResult tr = train_csi(ste_model, train, val, tc, /*use_quantizer=*/true);
  CHECK(tr.epochs.back().train_loss < tr.epochs.front().train_loss);
  const double quantized = eval_csi_nmse(ste_model, val, true);
  CHECK(quantized < untrained - 0.25);  // clearly better than the init

  // Information ordering: the unquantized round trip of the same model is at
  // least as good as the quantized one.
  const double unquantized = eval_csi_nmse(ste_model, val, false);
  CHECK(unquantized <= quantized + 1e-12);

  // Paired oracle: training through the quantizer beats training without it
  // and quantizing post hoc, evaluated with quantization either way.
  CsiTransformerModel posthoc(cfg, 7);
  (void)train_csi(posthoc, train, val, tc, /*use_quantizer=*/false);
  const double posthoc_quantized = eval_csi_nmse(posthoc, val, true);
  CHECK(quantized <= posthoc_quantized);

  // Distinct channels map to distinct bitstreams (no codeword collapse).
  int collisions = 0;
  for (std::size_t i = 0; i + 1 < val.size() && i < 500; ++i) {
    const auto a = quantize(ste_model.csi_encode(val.samples[i].h), cfg.bits);
    const auto b = quantize(ste_model.csi_encode(val.samples[i + 1].h), cfg.bits);
    if (a == b) ++collisions;
  }
  CHECK(collisions == 0);

  // Permuting the codeword entries degrades reconstruction: the decoder
  // consumes the dequantized entries in order.
  double base_sum = 0.0, perm_sum = 0.0;
  for (std::size_t i = 0; i < 32; ++i) {
    const Eigen::MatrixXcd& h = val.samples[i].h;
    const Eigen::VectorXd s_hat =
        make_codeword(ste_model.csi_encode(h), cfg.bits).dequantized;
    Eigen::VectorXd rotated(s_hat.size());
    for (int j = 0; j < s_hat.size(); ++j) rotated[j] = s_hat[(j + 1) % s_hat.size()];
    base_sum += nmse_db(ste_model.csi_decode(s_hat), h);
    perm_sum += nmse_db(ste_model.csi_decode(rotated), h);
  }
  CHECK(perm_sum / 32 > base_sum / 32);
  fs::remove_all(dir);
}

TEST_CASE("csi model loss gradient passes finite differences (quantizer bypassed)") {
  CsiConfig cfg = mini_csi_config();
  cfg.channel.nx = cfg.channel.ny = 2;
  cfg.channel.subcarriers = 2;
  cfg.codeword_len = 4;
  CsiTransformerModel model(cfg, 8);
  Rng rng(9);
  const Tensor tokens = batch_tokens({gen_channel(cfg.channel, rng).h});
  ParamStore& store = model.params();
  int checked = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.name(static_cast<int>(i));
    const bool pick = name == "compress.w" || name == "expand.b" || name == "enc.embed.w" ||
                      name == "dec.layer0.head0.wk" || name == "dec.head.w";
    if (!pick) continue;
    auto f = [&](const Tensor& x) {
      std::vector<Tensor> p = store.values();
      p[i] = x;
      return model.batch_loss(p, tokens, /*use_quantizer=*/false);
    };
    CAPTURE(name);
    CHECK(finite_diff_check(f, store.value(static_cast<int>(i))).max_rel_error < 1e-4);
    ++checked;
  }
  CHECK(checked == 5);
}
