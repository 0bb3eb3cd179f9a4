// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtwb/param_store.hpp"
#include "mtwb/rng.hpp"
#include "mtwb/tensor.hpp"

namespace mtwb {

struct EncoderConfig {
  int layers = 2;      // L
  int d_model = 64;    // d
  int heads = 4;       // h
  int d_k = 16;        // per-head query/key width
  int d_v = 16;        // per-head value width
  int d_ff = 256;      // feed-forward width
  int seq_len = 8;     // n
  int input_width = 0;   // pre-embedding feature width f
  int head_width = 0;    // per-token output head width, 0 = no head
  double ln_eps = 1e-6;

  // Named model sizes; dimensions follow d_k = d_v = d/h and d_ff = 4d.
  static EncoderConfig preset(char size, int seq_len, int input_width, int head_width);
  void validate() const;
};

// Optional per-run dimension overrides on top of a named preset; -1 keeps the
// preset value. d_k/d_v/d_ff are re-derived when d_model or heads change.
struct ModelOverrides {
  int layers = -1;
  int d_model = -1;
  int heads = -1;
  int d_ff = -1;

  EncoderConfig apply(EncoderConfig cfg) const;
  bool any() const { return layers >= 0 || d_model >= 0 || heads >= 0 || d_ff >= 0; }
  bool operator==(const ModelOverrides&) const = default;
};

// Indices into a ParamStore, laid out under `prefix` with the checkpoint
// naming convention "layer{i}.head{j}.wq" etc.
struct EncoderParams {
  EncoderConfig cfg;
  int embed_w = -1, embed_b = -1;
  struct Layer {
    std::vector<int> wq, wk, wv;  // per head
    int wo = -1;
    int ff_w1 = -1, ff_b1 = -1, ff_w2 = -1, ff_b2 = -1;
    int ln1_gain = -1, ln1_bias = -1, ln2_gain = -1, ln2_bias = -1;
  };
  std::vector<Layer> layers;
  int head_w = -1, head_b = -1;

  static EncoderParams create(ParamStore& store, const EncoderConfig& cfg, Rng& rng,
                              const std::string& prefix);
};

// Fixed sinusoidal table: PE[pos, 2i] = sin(pos / 10000^{2i/d}),
// PE[pos, 2i+1] = cos(pos / 10000^{2i/d}). d must be even.
Tensor positional_encoding(int n, int d);

// x: [..., n, d]. Per head i, softmax(Q_i K_i^T / sqrt(d_k)) V_i; heads are
// concatenated and output-projected back to width d.
Tensor multi_head_attention(const std::vector<Tensor>& p, const EncoderParams::Layer& layer,
                            const EncoderConfig& cfg, const Tensor& x);

// Post-norm residual layer: LN(x + MHA(x)) then LN(y + FF(y)) with
// FF = relu(y W1 + b1) W2 + b2 shared across positions.
Tensor encoder_layer(const std::vector<Tensor>& p, const EncoderParams::Layer& layer,
                     const EncoderConfig& cfg, const Tensor& x);

// Linear embedding f -> d, optional positional encoding, then the layer
// stack. x_raw: [..., n, f] -> [..., n, d].
Tensor encoder_forward(const std::vector<Tensor>& p, const EncoderParams& ep, const Tensor& x_raw,
                       bool use_positions);

// Per-token output head d -> head_width.
Tensor head_apply(const std::vector<Tensor>& p, const EncoderParams& ep, const Tensor& x);

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
std::pair<int, int> add_linear_params(ParamStore& store, const std::string& name, int in, int out,
                                      Rng& rng);

// Exact multiply-accumulate counts for one unbatched forward pass, split by
// role. `attention` covers only the QK^T and attention-mix contractions (the
// n^2 terms); projections are the per-layer Q/K/V/output maps.
struct FlopCount {
  std::uint64_t attention = 0;
  std::uint64_t projections = 0;
  std::uint64_t feedforward = 0;
  std::uint64_t embedding = 0;  // input embedding + output head
  std::uint64_t total = 0;
};
FlopCount flop_count(const EncoderConfig& cfg);

// Number of trainable scalars, a pure function of the config.
std::int64_t param_count(const EncoderConfig& cfg);

}  // namespace mtwb
