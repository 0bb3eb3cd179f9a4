// SPDX-License-Identifier: Apache-2.0
#include "mtwb/pipeline_csi.hpp"

#include <cmath>

#include "mtwb/errors.hpp"
#include "mtwb/pipeline_ce.hpp"

namespace mtwb {

void CsiConfig::validate() const {
  channel.validate();
  if (codeword_len < 1) throw ConfigError("csi.codeword_len: must be >= 1");
  if (bits < 1 || bits > 40) throw ConfigError("csi.bits: must be in [1, 40]");
}

std::vector<std::uint8_t> quantize(const Eigen::VectorXd& s, int bits) {
  if (bits < 1 || bits > 40) throw ConfigError("quantize: bits must be in [1, 40]");
  const double levels = std::ldexp(1.0, bits);
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(s.size()) * static_cast<std::size_t>(bits));
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (!(s[i] >= 0.0 && s[i] <= 1.0)) throw DomainError("quantize: input outside [0, 1]");
    const auto cell = static_cast<std::uint64_t>(std::min(std::floor(s[i] * levels), levels - 1.0));
    for (int b = bits - 1; b >= 0; --b) {
      out.push_back(static_cast<std::uint8_t>((cell >> b) & 1u));
    }
  }
  return out;
}

Eigen::VectorXd dequantize(const std::vector<std::uint8_t>& bitstream, int bits) {
  if (bits < 1 || bits > 40) throw ConfigError("dequantize: bits must be in [1, 40]");
  if (bitstream.size() % static_cast<std::size_t>(bits) != 0) {
    throw DimensionError("dequantize: bitstream length not a multiple of the bit width");
  }
  const double levels = std::ldexp(1.0, bits);
  const std::size_t n = bitstream.size() / static_cast<std::size_t>(bits);
  Eigen::VectorXd s(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t cell = 0;
    for (int b = 0; b < bits; ++b) {
      cell = (cell << 1) | (bitstream[i * static_cast<std::size_t>(bits) + static_cast<std::size_t>(b)] & 1u);
    }
    s[static_cast<Eigen::Index>(i)] = (static_cast<double>(cell) + 0.5) / levels;
  }
  return s;
}

std::vector<std::uint8_t> pack_bitstream(const std::vector<std::uint8_t>& bits) {
  std::vector<std::uint8_t> bytes((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) bytes[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
  }
  return bytes;
}

std::vector<std::uint8_t> unpack_bitstream(const std::vector<std::uint8_t>& bytes,
                                           std::size_t nbits) {
  if (bytes.size() != (nbits + 7) / 8) throw DimensionError("unpack_bitstream: byte count mismatch");
  std::vector<std::uint8_t> bits(nbits, 0);
  for (std::size_t i = 0; i < nbits; ++i) {
    bits[i] = (bytes[i / 8] >> (7 - i % 8)) & 1u;
  }
  return bits;
}

FeedbackCodeword make_codeword(const Eigen::VectorXd& s, int bits) {
  FeedbackCodeword cw;
  cw.analog = s;
  cw.bits = quantize(s, bits);
  cw.dequantized = dequantize(cw.bits, bits);
  return cw;
}

Tensor straight_through(const Tensor& s, int bits) { return ste_quantize(s, bits); }

Eigen::VectorXd FeedbackModel::csi_encode(const Eigen::MatrixXcd& h) const {
  Tensor tokens = reshape(tokens_from_cmatrix(h),
                          {1, cfg_.channel.subcarriers, 2 * cfg_.channel.antennas()});
  Tensor s = encode(store_.values(), tokens);
  Eigen::VectorXd out(cfg_.codeword_len);
  for (int i = 0; i < cfg_.codeword_len; ++i) out[i] = s.array()[i];
  return out;
}

Eigen::MatrixXcd FeedbackModel::csi_decode(const Eigen::VectorXd& s_hat) const {
  if (s_hat.size() != cfg_.codeword_len) {
    throw DimensionError("csi_decode: codeword length mismatch");
  }
  Array data(s_hat.size());
  for (Eigen::Index i = 0; i < s_hat.size(); ++i) data[i] = s_hat[i];
  Tensor out = decode(store_.values(), Tensor::from_array({1, cfg_.codeword_len}, std::move(data)));
  return unbatch_tokens(out).front();
}

Eigen::MatrixXcd FeedbackModel::roundtrip(const Eigen::MatrixXcd& h, bool use_quantizer) const {
  Eigen::VectorXd s = csi_encode(h);
  if (use_quantizer) s = make_codeword(s, cfg_.bits).dequantized;
  return csi_decode(s);
}

Tensor FeedbackModel::batch_loss(const std::vector<Tensor>& p, const Tensor& h_tokens,
                                 bool use_quantizer) const {
  Tensor s = encode(p, h_tokens);
  if (use_quantizer) s = straight_through(s, cfg_.bits);
  const Tensor h_hat = decode(p, s);
  const Tensor diff = sub(h_hat, h_tokens);
  return scalar_mul(sum_all(mul(diff, diff)), 1.0 / static_cast<double>(h_tokens.shape()[0]));
}

CsiTransformerModel::CsiTransformerModel(CsiConfig cfg, std::uint64_t seed)
    : FeedbackModel(std::move(cfg)) {
  Rng rng(seed);
  const int k = cfg_.channel.subcarriers;
  const int nt = cfg_.channel.antennas();
  EncoderConfig ec = cfg_.model_overrides.apply(EncoderConfig::preset(cfg_.model_size, k, 2 * nt, 0));
  enc_ = EncoderParams::create(store_, ec, rng, "enc.");
  std::tie(compress_w_, compress_b_) =
      add_linear_params(store_, "compress", k * ec.d_model, cfg_.codeword_len, rng);
  std::tie(expand_w_, expand_b_) = add_linear_params(store_, "expand", cfg_.codeword_len, k * 2 * nt, rng);
  EncoderConfig dc =
      cfg_.model_overrides.apply(EncoderConfig::preset(cfg_.model_size, k, 2 * nt, 2 * nt));
  dec_ = EncoderParams::create(store_, dc, rng, "dec.");
}

Tensor CsiTransformerModel::encode(const std::vector<Tensor>& p, const Tensor& h_tokens) const {
  const Index b = h_tokens.shape()[0];
  Tensor features = encoder_forward(p, enc_, h_tokens, true);
  Tensor flat = reshape(features, {b, enc_.cfg.seq_len * static_cast<Index>(enc_.cfg.d_model)});
  return sigmoid(linear(flat, p[static_cast<std::size_t>(compress_w_)],
                        p[static_cast<std::size_t>(compress_b_)]));
}

Tensor CsiTransformerModel::decode(const std::vector<Tensor>& p, const Tensor& s_hat) const {
  const Index b = s_hat.shape()[0];
  const int k = cfg_.channel.subcarriers;
  const int nt = cfg_.channel.antennas();
  Tensor lifted = linear(s_hat, p[static_cast<std::size_t>(expand_w_)],
                         p[static_cast<std::size_t>(expand_b_)]);
  Tensor tokens = reshape(lifted, {b, k, 2 * nt});
  return head_apply(p, dec_, encoder_forward(p, dec_, tokens, true));
}

std::uint64_t CsiTransformerModel::forward_flops() const {
  const auto k = static_cast<std::uint64_t>(cfg_.channel.subcarriers);
  const auto nt = static_cast<std::uint64_t>(cfg_.channel.antennas());
  const auto d = static_cast<std::uint64_t>(enc_.cfg.d_model);
  const auto ncw = static_cast<std::uint64_t>(cfg_.codeword_len);
  return flop_count(enc_.cfg).total + k * d * ncw  // compress
         + ncw * k * 2 * nt                        // expand
         + flop_count(dec_.cfg).total;
}

TrainResult train_csi(FeedbackModel& model, const Dataset& train, const Dataset& val,
                      const TrainConfig& tc, bool use_quantizer) {
  if (train.config != model.cfg().channel || val.config != model.cfg().channel) {
    throw ConfigError("train_csi: dataset channel config does not match the model");
  }
  auto batch_loss = [&](const std::vector<Tensor>& p, const std::vector<int>& batch, Rng&) {
    return model.batch_loss(p, gather_channel_tokens(train, batch), use_quantizer);
  };
  auto validate = [&](const std::vector<Tensor>&) {
    return eval_csi_nmse(model, val, use_quantizer);
  };
  return run_training(model.params(), tc, static_cast<int>(train.size()), batch_loss, validate);
}

double eval_csi_nmse(const FeedbackModel& model, const Dataset& test, bool use_quantizer) {
  if (test.samples.empty()) throw ConfigError("eval_csi_nmse: empty dataset");
  std::vector<Eigen::MatrixXcd> estimates, truths;
  estimates.reserve(test.size());
  const int chunk = 256;
  const int n = static_cast<int>(test.size());
  const auto& p = model.params().values();
  for (int start = 0; start < n; start += chunk) {
    const int len = std::min(chunk, n - start);
    std::vector<int> idx(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    Tensor tokens = gather_channel_tokens(test, idx);
    Tensor s = model.encode(p, tokens);
    if (use_quantizer) s = ste_quantize(s, model.cfg().bits);
    Tensor out = model.decode(p, s);
    for (auto& h_hat : unbatch_tokens(out)) estimates.push_back(std::move(h_hat));
  }
  for (const auto& s : test.samples) truths.push_back(s.h);
  return nmse_db(estimates, truths);
}

}  // namespace mtwb
