// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <vector>

#include "mtwb/channel.hpp"
#include "mtwb/complex_ops.hpp"
#include "mtwb/dataset.hpp"
#include "mtwb/trainer.hpp"
#include "mtwb/transformer.hpp"

namespace mtwb {

// Bit-level CSI feedback: UE-side encoder compresses the channel to an
// analog codeword in (0,1)^N_cw, a uniform scalar quantizer produces the
// feedback bitstream, and the BS-side decoder reconstructs the channel.
struct CsiConfig {
  ChannelConfig channel;
  int codeword_len = 16;  // N_cw
  int bits = 2;           // B per codeword entry
  char model_size = 'S';
  ModelOverrides model_overrides;

  int feedback_bits() const { return codeword_len * bits; }
  void validate() const;
};

// ---- uniform scalar quantizer (mid-rise codebook on [0,1]) ----
// Index i = min(floor(s * 2^B), 2^B - 1); reconstruction (i + 0.5) / 2^B.
// Bitstreams hold one 0/1 value per element, MSB-first per entry.
std::vector<std::uint8_t> quantize(const Eigen::VectorXd& s, int bits);
Eigen::VectorXd dequantize(const std::vector<std::uint8_t>& bitstream, int bits);
// MSB-first byte packing for export; the final byte is zero-padded.
std::vector<std::uint8_t> pack_bitstream(const std::vector<std::uint8_t>& bits);
std::vector<std::uint8_t> unpack_bitstream(const std::vector<std::uint8_t>& bytes,
                                           std::size_t nbits);

struct FeedbackCodeword {
  Eigen::VectorXd analog;       // s in (0,1)^N_cw
  std::vector<std::uint8_t> bits;
  Eigen::VectorXd dequantized;  // s_hat
};
FeedbackCodeword make_codeword(const Eigen::VectorXd& s, int bits);

// Forward quantize-dequantize with identity backward.
Tensor straight_through(const Tensor& s, int bits);

// Common surface for the transformer model and the MLP baseline so train_csi
// and the harness treat them interchangeably.
class FeedbackModel {
 public:
  virtual ~FeedbackModel() = default;
  const CsiConfig& cfg() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // h_tokens: [B, K, 2Nt] -> codewords [B, N_cw], entries in (0,1).
  virtual Tensor encode(const std::vector<Tensor>& p, const Tensor& h_tokens) const = 0;
  // s_hat: [B, N_cw] -> reconstructed tokens [B, K, 2Nt].
  virtual Tensor decode(const std::vector<Tensor>& p, const Tensor& s_hat) const = 0;
  virtual std::uint64_t forward_flops() const = 0;
  virtual const char* scheme_name() const = 0;

  // Eval path.
  Eigen::VectorXd csi_encode(const Eigen::MatrixXcd& h) const;
  Eigen::MatrixXcd csi_decode(const Eigen::VectorXd& s_hat) const;
  Eigen::MatrixXcd roundtrip(const Eigen::MatrixXcd& h, bool use_quantizer = true) const;

  Tensor batch_loss(const std::vector<Tensor>& p, const Tensor& h_tokens,
                    bool use_quantizer) const;

 protected:
  explicit FeedbackModel(CsiConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }
  CsiConfig cfg_;
  ParamStore store_;
};

// Fig.-style transformer autoencoder: encoder over subcarrier tokens with
// positions, flatten -> linear -> sigmoid codeword; mirrored decoder with
// independent parameters.
class CsiTransformerModel final : public FeedbackModel {
 public:
  CsiTransformerModel(CsiConfig cfg, std::uint64_t seed);
  Tensor encode(const std::vector<Tensor>& p, const Tensor& h_tokens) const override;
  Tensor decode(const std::vector<Tensor>& p, const Tensor& s_hat) const override;
  std::uint64_t forward_flops() const override;
  const char* scheme_name() const override { return "csi-transformer"; }

 private:
  EncoderParams enc_, dec_;
  int compress_w_ = -1, compress_b_ = -1;
  int expand_w_ = -1, expand_b_ = -1;
};

TrainResult train_csi(FeedbackModel& model, const Dataset& train, const Dataset& val,
                      const TrainConfig& tc, bool use_quantizer = true);

double eval_csi_nmse(const FeedbackModel& model, const Dataset& test, bool use_quantizer = true);

}  // namespace mtwb
