// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <vector>

#include "mtwb/channel.hpp"
#include "mtwb/complex_ops.hpp"
#include "mtwb/dataset.hpp"
#include "mtwb/trainer.hpp"
#include "mtwb/transformer.hpp"

namespace mtwb {

// Three-encoder hybrid beamforming for Nu single-antenna users over K
// subcarriers: encoder-1 proposes a fully-digital target F, encoder-2 reads a
// user-major permutation of F and emits the analog phases (frequency-flat,
// one RF chain per user), encoder-3 emits the per-subcarrier digital stage.
struct HbfConfig {
  ChannelConfig channel;
  int users = 2;          // N_u (= RF chains)
  int mode = 1;           // 1: explicit CSI input; 2: quantized feedback input
  int codeword_len = 8;   // per-UE N_cw, mode 2
  int bits = 1;           // per-entry quantizer width, mode 2
  char model_size = 'S';
  ModelOverrides model_overrides;
  double noise_power = 1.0;

  int total_feedback_bits() const { return users * codeword_len * bits; }
  void validate() const;
};

struct MultiUserChannel {
  std::vector<Eigen::MatrixXcd> users;  // each K x Nt, drawn independently
};

// Pairs consecutive dataset samples into Nu-user channels; when `normalize`
// each user's matrix is scaled to ||h||_F^2 = K * Nt exactly so the fixed
// noise power pins the operating SNR.
std::vector<MultiUserChannel> make_multiuser(const Dataset& ds, int users, bool normalize = true);

struct HybridBeamformer {
  std::vector<Eigen::MatrixXcd> fully_digital;  // K of Nu x Nt (row u = user)
  Eigen::MatrixXd phases;                       // Nu x Nt
  Eigen::MatrixXcd f_rf;                        // Nt x Nu, entries exp(j*phase)/sqrt(Nt)
  std::vector<Eigen::MatrixXcd> f_bb;           // K of Nu x Nu, power-normalized
};

// Scales each F_BB[k] so ||F_RF F_BB[k]||_F^2 = Nu; zero product norm raises
// NumericError.
std::vector<Eigen::MatrixXcd> normalize_power(const Eigen::MatrixXcd& f_rf,
                                              std::vector<Eigen::MatrixXcd> f_bb);

// (1/K) sum_k sum_u log2(1 + |h_uk^H w_uk|^2 / (sum_{v!=u} |h_uk^H w_vk|^2 +
// noise)), w_uk = F_RF F_BB[k] column u. Requires a power-normalized
// beamformer (DomainError otherwise).
double sum_rate(const MultiUserChannel& ch, const Eigen::MatrixXcd& f_rf,
                const std::vector<Eigen::MatrixXcd>& f_bb, double noise_power);

// All tape-path intermediates of one batched forward.
struct HbfForward {
  Tensor f_tokens;        // [B, K, 2NuNt]
  Tensor phases;          // [B, Nu, Nt]
  Tensor rf_re, rf_im;    // [B, Nu, Nt]; row u is RF chain u (= F_RF column u)
  Tensor bb_re, bb_im;    // [B, K, Nu, Nu], power-normalized
  Tensor beam_re, beam_im;  // [B, K, Nu, Nt]; row u = w_u^T, normalized
};

class HbfModel {
 public:
  HbfModel(HbfConfig cfg, std::uint64_t seed);

  const HbfConfig& cfg() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Mode-dependent input tokens [B, K, 2NuNt]; in mode 2 the UE feedback
  // encoders and straight-through quantizer run inside this call.
  Tensor input_tokens(const std::vector<Tensor>& p,
                      const std::vector<const MultiUserChannel*>& batch) const;
  HbfForward forward(const std::vector<Tensor>& p, const Tensor& x_tokens) const;
  // Per-sample achievable rates (bits/s/Hz) as a [B, 1] tensor.
  Tensor rates(const HbfForward& fwd, const std::vector<const MultiUserChannel*>& batch) const;
  Tensor batch_neg_rate(const std::vector<Tensor>& p,
                        const std::vector<const MultiUserChannel*>& batch) const;

  HybridBeamformer beamform(const MultiUserChannel& ch) const;
  std::vector<double> eval_rates(const std::vector<MultiUserChannel>& set) const;

  std::uint64_t forward_flops() const;

 private:
  HbfConfig cfg_;
  ParamStore store_;
  EncoderParams enc1_, enc2_, enc3_;
  EncoderParams ue_enc_;                    // mode 2
  int ue_compress_w_ = -1, ue_compress_b_ = -1;
  int lift_w_ = -1, lift_b_ = -1;
};

TrainResult train_hbf(HbfModel& model, const std::vector<MultiUserChannel>& train,
                      const std::vector<MultiUserChannel>& val, const TrainConfig& tc);

double eval_hbf_rate(const HbfModel& model, const std::vector<MultiUserChannel>& test);

}  // namespace mtwb
