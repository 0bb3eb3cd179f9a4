// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mtwb/channel.hpp"
#include "mtwb/complex_ops.hpp"
#include "mtwb/dataset.hpp"
#include "mtwb/trainer.hpp"
#include "mtwb/transformer.hpp"

namespace mtwb {

// Joint pilot design and channel estimation: a trainable complex pilot map
// (M unit-power rows over Nt antennas), AWGN at a training SNR, and a
// transformer reconstruction over subcarrier tokens.
struct CeConfig {
  ChannelConfig channel;
  int measurements = 6;  // M = round(ratio * Nt)
  char model_size = 'S';
  ModelOverrides model_overrides;
  std::vector<double> train_snrs_db = {0.0, 5.0, 10.0, 15.0, 20.0};
  double val_snr_db = 10.0;

  double ratio() const {
    return static_cast<double>(measurements) / channel.antennas();
  }
  void validate() const;
};

// Per-subcarrier received pilots over M time slots.
struct Measurement {
  Eigen::MatrixXcd y;  // K x M
};

class CeModel {
 public:
  CeModel(CeConfig cfg, std::uint64_t seed);

  const CeConfig& cfg() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const EncoderConfig& encoder_cfg() const { return estimator_.cfg; }

  // Tape path. h_tokens: [B, K, 2Nt] interleaved channels. The AWGN draw is
  // treated as a constant, so the result stays differentiable w.r.t. the
  // pilot; snr_db = +inf disables noise.
  Tensor measure(const std::vector<Tensor>& p, const Tensor& h_tokens, double snr_db,
                 Rng* noise_rng) const;
  Tensor reconstruct(const std::vector<Tensor>& p, const Tensor& y_tokens) const;
  Tensor batch_loss(const std::vector<Tensor>& p, const Tensor& h_tokens, double snr_db,
                    Rng& rng) const;

  // Eval path.
  Eigen::MatrixXcd pilot_matrix() const;  // M x Nt, unit-norm rows
  Measurement pilot_project(const Eigen::MatrixXcd& h, double snr_db, Rng& rng) const;
  Eigen::MatrixXcd estimate(const Measurement& y) const;  // K x Nt

  // Projects every pilot row back to unit norm; run after each optimizer step.
  void renormalize_pilot();

  std::uint64_t forward_flops() const;  // one-sample multiply-accumulates

 private:
  CeConfig cfg_;
  ParamStore store_;
  int pilot_re_ = -1, pilot_im_ = -1;
  EncoderParams estimator_;
};

TrainResult train_ce(CeModel& model, const Dataset& train, const Dataset& val,
                     const TrainConfig& tc);

// Test-set NMSE at one SNR; noise uses per-sample streams of `noise_seed`.
double eval_ce_nmse(const CeModel& model, const Dataset& test, double snr_db,
                    std::uint64_t noise_seed);

// [B, K, 2Nt] interleaved tokens for the given sample indices.
Tensor gather_channel_tokens(const Dataset& ds, const std::vector<int>& idx);

}  // namespace mtwb
