// SPDX-License-Identifier: Apache-2.0
#include "mtwb/transformer.hpp"

#include <cmath>

#include "mtwb/errors.hpp"

namespace mtwb {

EncoderConfig EncoderConfig::preset(char size, int seq_len, int input_width, int head_width) {
  EncoderConfig c;
  switch (size) {
    case 'S': c.layers = 2; c.d_model = 64; c.heads = 4; break;
    case 'M': c.layers = 4; c.d_model = 128; c.heads = 8; break;
    case 'L': c.layers = 6; c.d_model = 256; c.heads = 8; break;
    default: throw ConfigError(std::string("model.preset: unknown size '") + size + "'");
  }
  c.d_k = c.d_v = c.d_model / c.heads;
  c.d_ff = 4 * c.d_model;
  c.seq_len = seq_len;
  c.input_width = input_width;
  c.head_width = head_width;
  c.validate();
  return c;
}

void EncoderConfig::validate() const {
  if (layers < 0) throw ConfigError("model.layers: must be >= 0");
  if (d_model < 1 || heads < 1 || d_k < 1 || d_v < 1 || d_ff < 1 || seq_len < 1 || input_width < 1) {
    throw ConfigError("model: all dimensions must be positive");
  }
  if (heads * d_v != d_model) {
    throw ConfigError("model: heads * d_v must equal d_model so concatenated heads restore width d");
  }
  if (head_width < 0) throw ConfigError("model.head_width: must be >= 0");
}

EncoderConfig ModelOverrides::apply(EncoderConfig cfg) const {
  if (layers >= 0) cfg.layers = layers;
  if (d_model >= 0) cfg.d_model = d_model;
  if (heads >= 0) cfg.heads = heads;
  if (d_model >= 0 || heads >= 0) {
    if (cfg.d_model % cfg.heads != 0) {
      throw ConfigError("model.overrides: d_model must be divisible by heads");
    }
    cfg.d_k = cfg.d_v = cfg.d_model / cfg.heads;
    cfg.d_ff = 4 * cfg.d_model;
  }
  if (d_ff >= 0) cfg.d_ff = d_ff;
  cfg.validate();
  return cfg;
}

EncoderParams EncoderParams::create(ParamStore& store, const EncoderConfig& cfg, Rng& rng,
                                    const std::string& prefix) {
  cfg.validate();
  EncoderParams ep;
  ep.cfg = cfg;
  std::tie(ep.embed_w, ep.embed_b) =
      add_linear_params(store, prefix + "embed", cfg.input_width, cfg.d_model, rng);
  ep.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    auto& layer = ep.layers[static_cast<std::size_t>(l)];
    const std::string lp = prefix + "layer" + std::to_string(l) + ".";
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    auto init_mat = [&](int rows, int cols) {
      Array a(rows * cols);
      const double b = 1.0 / std::sqrt(static_cast<double>(rows));
      for (Index i = 0; i < a.size(); ++i) a[i] = rng.uniform(-b, b);
      return Tensor::from_array({rows, cols}, std::move(a));
    };
    (void)bound;
    for (int h = 0; h < cfg.heads; ++h) {
      const std::string hp = lp + "head" + std::to_string(h) + ".";
      layer.wq.push_back(store.add(hp + "wq", init_mat(cfg.d_model, cfg.d_k)));
      layer.wk.push_back(store.add(hp + "wk", init_mat(cfg.d_model, cfg.d_k)));
      layer.wv.push_back(store.add(hp + "wv", init_mat(cfg.d_model, cfg.d_v)));
    }
    layer.wo = store.add(lp + "wo", init_mat(cfg.heads * cfg.d_v, cfg.d_model));
    std::tie(layer.ff_w1, layer.ff_b1) = add_linear_params(store, lp + "ff1", cfg.d_model, cfg.d_ff, rng);
    std::tie(layer.ff_w2, layer.ff_b2) = add_linear_params(store, lp + "ff2", cfg.d_ff, cfg.d_model, rng);
    layer.ln1_gain = store.add(lp + "ln1.gain", Tensor::full({cfg.d_model}, 1.0));
    layer.ln1_bias = store.add(lp + "ln1.bias", Tensor::zeros({cfg.d_model}));
    layer.ln2_gain = store.add(lp + "ln2.gain", Tensor::full({cfg.d_model}, 1.0));
    layer.ln2_bias = store.add(lp + "ln2.bias", Tensor::zeros({cfg.d_model}));
  }
  if (cfg.head_width > 0) {
    std::tie(ep.head_w, ep.head_b) =
        add_linear_params(store, prefix + "head", cfg.d_model, cfg.head_width, rng);
  }
  return ep;
}

std::pair<int, int> add_linear_params(ParamStore& store, const std::string& name, int in, int out,
                                      Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Array w(static_cast<Index>(in) * out);
  for (Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  Array b(out);
  for (Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(-bound, bound);
  const int wi = store.add(name + ".w", Tensor::from_array({in, out}, std::move(w)));
  const int bi = store.add(name + ".b", Tensor::from_array({out}, std::move(b)));
  return {wi, bi};
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

Tensor positional_encoding(int n, int d) {
  if (d % 2 != 0) throw ConfigError("positional_encoding: d must be even, got " + std::to_string(d));
  if (n < 1) throw ConfigError("positional_encoding: n must be >= 1");
  Array pe(static_cast<Index>(n) * d);
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d / 2; ++i) {
      const double rate = std::pow(10000.0, -2.0 * i / static_cast<double>(d));
      pe[static_cast<Index>(pos) * d + 2 * i] = std::sin(pos * rate);
      pe[static_cast<Index>(pos) * d + 2 * i + 1] = std::cos(pos * rate);
    }
  }
  return Tensor::from_array({n, d}, std::move(pe));
}

Tensor multi_head_attention(const std::vector<Tensor>& p, const EncoderParams::Layer& layer,
                            const EncoderConfig& cfg, const Tensor& x) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_k));
  std::vector<Tensor> heads;
  heads.reserve(layer.wq.size());
  for (std::size_t h = 0; h < layer.wq.size(); ++h) {
    const Tensor q = matmul(x, p[static_cast<std::size_t>(layer.wq[h])]);
    const Tensor k = matmul(x, p[static_cast<std::size_t>(layer.wk[h])]);
    const Tensor v = matmul(x, p[static_cast<std::size_t>(layer.wv[h])]);
    std::vector<Index> swap_last_two(static_cast<std::size_t>(k.rank()));
    for (std::size_t a = 0; a < swap_last_two.size(); ++a) swap_last_two[a] = static_cast<Index>(a);
    std::swap(swap_last_two[swap_last_two.size() - 1], swap_last_two[swap_last_two.size() - 2]);
    const Tensor scores = scalar_mul(matmul(q, permute_axes(k, swap_last_two)), scale);
    const Tensor weights = softmax_rows(scores);
    heads.push_back(attn_mix(weights, v));
  }
  const Tensor merged = concat(heads, x.rank() - 1);
  return matmul(merged, p[static_cast<std::size_t>(layer.wo)]);
}

Tensor encoder_layer(const std::vector<Tensor>& p, const EncoderParams::Layer& layer,
                     const EncoderConfig& cfg, const Tensor& x) {
  const Tensor y = layer_norm(add(x, multi_head_attention(p, layer, cfg, x)),
                              p[static_cast<std::size_t>(layer.ln1_gain)],
                              p[static_cast<std::size_t>(layer.ln1_bias)], cfg.ln_eps);
  const Tensor ff = linear(relu(linear(y, p[static_cast<std::size_t>(layer.ff_w1)],
                                       p[static_cast<std::size_t>(layer.ff_b1)])),
                           p[static_cast<std::size_t>(layer.ff_w2)],
                           p[static_cast<std::size_t>(layer.ff_b2)]);
  return layer_norm(add(y, ff), p[static_cast<std::size_t>(layer.ln2_gain)],
                    p[static_cast<std::size_t>(layer.ln2_bias)], cfg.ln_eps);
}

Tensor encoder_forward(const std::vector<Tensor>& p, const EncoderParams& ep, const Tensor& x_raw,
                       bool use_positions) {
  const EncoderConfig& cfg = ep.cfg;
  if (x_raw.rank() < 2 || x_raw.shape().back() != cfg.input_width ||
      x_raw.shape()[static_cast<std::size_t>(x_raw.rank() - 2)] != cfg.seq_len) {
    throw DimensionError("encoder_forward: input " + shape_str(x_raw.shape()) + " does not match n=" +
                         std::to_string(cfg.seq_len) + ", f=" + std::to_string(cfg.input_width));
  }
  Tensor h = linear(x_raw, p[static_cast<std::size_t>(ep.embed_w)],
                    p[static_cast<std::size_t>(ep.embed_b)]);
  if (use_positions) {
    h = add(h, positional_encoding(cfg.seq_len, cfg.d_model));
  }
  for (const auto& layer : ep.layers) {
    h = encoder_layer(p, layer, cfg, h);
  }
  return h;
}

Tensor head_apply(const std::vector<Tensor>& p, const EncoderParams& ep, const Tensor& x) {
  if (ep.head_w < 0) throw ConfigError("head_apply: encoder has no output head");
  return linear(x, p[static_cast<std::size_t>(ep.head_w)], p[static_cast<std::size_t>(ep.head_b)]);
}

FlopCount flop_count(const EncoderConfig& cfg) {
  cfg.validate();
  FlopCount f;
  const auto n = static_cast<std::uint64_t>(cfg.seq_len);
  const auto d = static_cast<std::uint64_t>(cfg.d_model);
  const auto dk = static_cast<std::uint64_t>(cfg.d_k);
  const auto dv = static_cast<std::uint64_t>(cfg.d_v);
  const auto dff = static_cast<std::uint64_t>(cfg.d_ff);
  const auto h = static_cast<std::uint64_t>(cfg.heads);
  const auto L = static_cast<std::uint64_t>(cfg.layers);
  f.attention = L * h * n * n * (dk + dv);                       // QK^T and attention-mix
  f.projections = L * (h * n * d * (2 * dk + dv) + n * (h * dv) * d);
  f.feedforward = L * 2 * n * d * dff;
  f.embedding = n * static_cast<std::uint64_t>(cfg.input_width) * d +
                n * d * static_cast<std::uint64_t>(cfg.head_width);
  f.total = f.attention + f.projections + f.feedforward + f.embedding;
  return f;
}

std::int64_t param_count(const EncoderConfig& cfg) {
  cfg.validate();
  const std::int64_t d = cfg.d_model;
  std::int64_t per_layer = 0;
  per_layer += static_cast<std::int64_t>(cfg.heads) * d * (2 * cfg.d_k + cfg.d_v);  // q, k, v
  per_layer += static_cast<std::int64_t>(cfg.heads) * cfg.d_v * d;                  // output projection
  per_layer += d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d;                          // feed-forward
  per_layer += 4 * d;                                                               // two layer norms
  std::int64_t total = static_cast<std::int64_t>(cfg.layers) * per_layer;
  total += static_cast<std::int64_t>(cfg.input_width) * d + d;                      // embedding
  if (cfg.head_width > 0) total += d * static_cast<std::int64_t>(cfg.head_width) + cfg.head_width;
  return total;
}

}  // namespace mtwb
