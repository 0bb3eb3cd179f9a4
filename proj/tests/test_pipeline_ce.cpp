// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mtwb/finite_diff.hpp"
#include "mtwb/pipeline_ce.hpp"

using namespace mtwb;
namespace fs = std::filesystem;

namespace {

CeConfig tiny_ce_config() {
  CeConfig cfg;
  cfg.channel = ChannelConfig::desk();
  cfg.channel.nx = cfg.channel.ny = 2;  // Nt = 4
  cfg.channel.subcarriers = 2;
  cfg.measurements = 2;
  cfg.model_size = 'S';
  cfg.model_overrides.layers = 1;
  cfg.model_overrides.d_model = 8;
  cfg.model_overrides.heads = 2;
  return cfg;
}

Tensor tokens_of(const std::vector<Eigen::MatrixXcd>& hs) { return batch_tokens(hs); }

}  // namespace

TEST_CASE("pilot projection with a selection matrix picks the leading antennas") {
  CeConfig cfg = tiny_ce_config();
  CeModel model(cfg, 1);
  const int nt = cfg.channel.antennas();
  const int m = cfg.measurements;
  // Overwrite the pilot with the first M rows of the identity.
  Array re = Array::Zero(m * nt), im = Array::Zero(m * nt);
  for (int r = 0; r < m; ++r) re[r * nt + r] = 1.0;
  ParamStore& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.name(static_cast<int>(i)) == "pilot.re") {
      store.set_value(static_cast<int>(i), Tensor::from_array({m, nt}, re));
    }
    if (store.name(static_cast<int>(i)) == "pilot.im") {
      store.set_value(static_cast<int>(i), Tensor::from_array({m, nt}, im));
    }
  }
  Rng rng(2);
  const ChannelSample s = gen_channel(cfg.channel, rng);
  Rng unused(0);
  const Measurement meas =
      model.pilot_project(s.h, std::numeric_limits<double>::infinity(), unused);
  for (int k = 0; k < cfg.channel.subcarriers; ++k) {
    for (int j = 0; j < m; ++j) CHECK(meas.y(k, j) == s.h(k, j));
  }
}

TEST_CASE("noise-free projection equals the exact complex product") {
  CeConfig cfg = tiny_ce_config();
  CeModel model(cfg, 3);
  Rng rng(4);
  const ChannelSample s = gen_channel(cfg.channel, rng);
  Rng unused(0);
  const Measurement meas =
      model.pilot_project(s.h, std::numeric_limits<double>::infinity(), unused);
  const Eigen::MatrixXcd expect = s.h * model.pilot_matrix().transpose();
  CHECK((meas.y - expect).norm() == 0.0);

  // The batched tape path agrees with the eval path.
  const Tensor y_tokens = model.measure(model.params().values(), tokens_of({s.h}),
                                        std::numeric_limits<double>::infinity(), nullptr);
  const Eigen::MatrixXcd batched = unbatch_tokens(y_tokens).front();
  CHECK((batched - expect).norm() < 1e-12);
}

TEST_CASE("measurement energy gradient w.r.t. the pilot passes finite differences") {
  CeConfig cfg = tiny_ce_config();
  CeModel model(cfg, 5);
  Rng rng(6);
  const Tensor h_tokens = tokens_of({gen_channel(cfg.channel, rng).h});
  ParamStore& store = model.params();
  int pilot_idx = -1;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.name(static_cast<int>(i)) == "pilot.re") pilot_idx = static_cast<int>(i);
  }
  REQUIRE(pilot_idx >= 0);
  auto f = [&](const Tensor& x) {
    std::vector<Tensor> p = store.values();
    p[static_cast<std::size_t>(pilot_idx)] = x;
    const Tensor y = model.measure(p, h_tokens, std::numeric_limits<double>::infinity(), nullptr);
    return sum_all(mul(y, y));
  };
  CHECK(finite_diff_check(f, store.value(pilot_idx)).max_rel_error < 1e-4);
}

TEST_CASE("full loss gradient w.r.t. pilot and estimator parameters (tiny model)") {
  CeConfig cfg = tiny_ce_config();
  CeModel model(cfg, 7);
  Rng rng(8);
  const Tensor h_tokens =
      tokens_of({gen_channel(cfg.channel, rng).h, gen_channel(cfg.channel, rng).h});
  ParamStore& store = model.params();
  Rng dummy(0);
  int checked = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.name(static_cast<int>(i));
    const bool pick = name == "pilot.re" || name == "pilot.im" || name == "est.embed.w" ||
                      name == "est.layer0.head1.wq" || name == "est.ff-none" ||
                      name == "est.layer0.ff1.w" || name == "est.layer0.ln1.gain" ||
                      name == "est.head.b";
    if (!pick) continue;
    auto f = [&](const Tensor& x) {
      std::vector<Tensor> p = store.values();
      p[i] = x;
      Rng noise(9);  // unused at infinite SNR
      return model.batch_loss(p, h_tokens, std::numeric_limits<double>::infinity(), noise);
    };
    CAPTURE(name);
    CHECK(finite_diff_check(f, store.value(static_cast<int>(i))).max_rel_error < 1e-4);
    ++checked;
  }
  CHECK(checked >= 6);
}

TEST_CASE("estimator output is well-shaped, finite, deterministic; untrained floor near 0 dB") {
  CeConfig cfg;
  cfg.channel = ChannelConfig::paper_full();
  cfg.measurements = 24;  // ratio 3/8 of 64
  cfg.model_size = 'S';
  CeModel model(cfg, 10);
  std::vector<Eigen::MatrixXcd> estimates, truths;
  for (int i = 0; i < 500; ++i) {
    Rng rng = Rng::stream(4000, static_cast<std::uint64_t>(i));
    const ChannelSample s = gen_channel(cfg.channel, rng);
    Rng noise = Rng::stream(4001, static_cast<std::uint64_t>(i));
    const Measurement m = model.pilot_project(s.h, 10.0, noise);
    const Eigen::MatrixXcd h_hat = model.estimate(m);
    REQUIRE(h_hat.rows() == cfg.channel.subcarriers);
    REQUIRE(h_hat.cols() == cfg.channel.antennas());
    CHECK(h_hat.allFinite());
    if (i == 0) {
      const Eigen::MatrixXcd again = model.estimate(m);
      CHECK((h_hat - again).norm() == 0.0);
    }
    estimates.push_back(h_hat);
    truths.push_back(s.h);
  }
  const double floor_db = nmse_db(estimates, truths);
  CHECK(floor_db >= -3.0);
  CHECK(floor_db <= 3.0);
}

TEST_CASE("pilot rows stay unit norm through training steps") {
  CeConfig cfg = tiny_ce_config();
  CeModel model(cfg, 11);
  const fs::path dir = fs::temp_directory_path() / "mtwb_ce_renorm";
  fs::create_directories(dir);
  gen_dataset(cfg.channel, 48, 21, dir / "train.mtwc");
  gen_dataset(cfg.channel, 16, 22, dir / "val.mtwc");
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 16;
  (void)train_ce(model, Dataset::load(dir / "train.mtwc"), Dataset::load(dir / "val.mtwc"), tc);
  const Eigen::MatrixXcd pilot = model.pilot_matrix();
  for (int r = 0; r < pilot.rows(); ++r) {
    CHECK(std::abs(pilot.row(r).norm() - 1.0) <= 1e-9);
  }
  fs::remove_all(dir);
}

TEST_CASE("one-sample dataset overfits far below -30 dB") {
  CeConfig cfg = tiny_ce_config();
  cfg.channel = ChannelConfig::desk();
  cfg.measurements = 6;
  cfg.model_overrides.layers = 1;
  cfg.model_overrides.d_model = 32;
  cfg.model_overrides.heads = 2;
  cfg.train_snrs_db = {std::numeric_limits<double>::infinity()};
  cfg.val_snr_db = std::numeric_limits<double>::infinity();
  CeModel model(cfg, 12);
  const fs::path dir = fs::temp_directory_path() / "mtwb_ce_overfit";
  fs::create_directories(dir);
  gen_dataset(cfg.channel, 1, 33, dir / "one.mtwc");
  const Dataset one = Dataset::load(dir / "one.mtwc");
  TrainConfig tc;
  tc.epochs = 600;
  tc.batch = 1;
  tc.patience = 600;
  tc.lr = 3e-3;
  (void)train_ce(model, one, one, tc);
  CHECK(eval_ce_nmse(model, one, std::numeric_limits<double>::infinity(), 1) <= -30.0);
  fs::remove_all(dir);
}

TEST_CASE("mini training: smoothed loss trend is non-increasing and NMSE improves") {
  CeConfig cfg;
  cfg.channel = ChannelConfig::desk();
  cfg.measurements = 6;
  cfg.model_size = 'S';
  cfg.model_overrides.layers = 1;
  cfg.model_overrides.d_model = 32;
  cfg.model_overrides.heads = 2;
  CeModel model(cfg, 13);
  const fs::path dir = fs::temp_directory_path() / "mtwb_ce_mini";
  fs::create_directories(dir);
  gen_dataset(cfg.channel, 800, 41, dir / "train.mtwc");
  gen_dataset(cfg.channel, 128, 42, dir / "val.mtwc");
  const Dataset train = Dataset::load(dir / "train.mtwc");
  const Dataset val = Dataset::load(dir / "val.mtwc");
  const double before = eval_ce_nmse(model, val, 10.0, 7);
  TrainConfig tc;
  tc.epochs = 12;
  tc.batch = 64;
  tc.patience = 12;
  const TrainResult tr = train_ce(model, train, val, tc);
  REQUIRE(tr.epochs.size() == 12);
  // 5-epoch moving average of the training loss.
  std::vector<double> ma;
  for (std::size_t i = 0; i + 5 <= tr.epochs.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = i; j < i + 5; ++j) s += tr.epochs[j].train_loss;
    ma.push_back(s / 5.0);
  }
  for (std::size_t i = 1; i < ma.size(); ++i) CHECK(ma[i] <= ma[i - 1] * 1.005);
  CHECK(eval_ce_nmse(model, val, 10.0, 7) < before);
  fs::remove_all(dir);
}
