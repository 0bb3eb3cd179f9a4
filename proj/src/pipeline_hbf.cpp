// SPDX-License-Identifier: Apache-2.0
#include "mtwb/pipeline_hbf.hpp"

#include <cmath>

#include "mtwb/errors.hpp"

namespace mtwb {

namespace {

constexpr double kLn2 = 0.6931471805599453;

// [B, K, Nu, Nt] interleaved user-stacked channel tokens: token (b, k)
// holds, user-major, the interleaved row h_u[k, :].
Array stacked_channels(const std::vector<const MultiUserChannel*>& batch, int k, int nu, int nt) {
  Array data(static_cast<Index>(batch.size()) * k * nu * 2 * nt);
  Index idx = 0;
  for (const MultiUserChannel* ch : batch) {
    for (int kk = 0; kk < k; ++kk) {
      for (int u = 0; u < nu; ++u) {
        const auto& h = ch->users[static_cast<std::size_t>(u)];
        for (int t = 0; t < nt; ++t) {
          data[idx++] = h(kk, t).real();
          data[idx++] = h(kk, t).imag();
        }
      }
    }
  }
  return data;
}

}  // namespace

void HbfConfig::validate() const {
  channel.validate();
  if (users < 1) throw ConfigError("hbf.users: must be >= 1");
  if (mode != 1 && mode != 2) throw ConfigError("hbf.mode: must be 1 or 2");
  if (mode == 2) {
    if (codeword_len < 1) throw ConfigError("hbf.codeword_len: must be >= 1");
    if (bits < 1 || bits > 40) throw ConfigError("hbf.bits: must be in [1, 40]");
  }
  if (noise_power <= 0.0) throw ConfigError("hbf.noise_power: must be > 0");
}

std::vector<MultiUserChannel> make_multiuser(const Dataset& ds, int users, bool normalize) {
  if (users < 1) throw ConfigError("make_multiuser: users must be >= 1");
  const double target = std::sqrt(static_cast<double>(ds.config.subcarriers) *
                                  ds.config.antennas());
  std::vector<MultiUserChannel> out;
  out.reserve(ds.size() / static_cast<std::size_t>(users));
  for (std::size_t i = 0; i + static_cast<std::size_t>(users) <= ds.size();
       i += static_cast<std::size_t>(users)) {
    MultiUserChannel ch;
    for (int u = 0; u < users; ++u) {
      Eigen::MatrixXcd h = ds.samples[i + static_cast<std::size_t>(u)].h;
      if (normalize) {
        const double norm = h.norm();
        if (norm <= 0.0) throw NumericError("make_multiuser: zero-norm channel");
        h *= target / norm;
      }
      ch.users.push_back(std::move(h));
    }
    out.push_back(std::move(ch));
  }
  return out;
}

std::vector<Eigen::MatrixXcd> normalize_power(const Eigen::MatrixXcd& f_rf,
                                              std::vector<Eigen::MatrixXcd> f_bb) {
  if (f_bb.empty()) throw DimensionError("normalize_power: empty digital stage");
  const double nu = static_cast<double>(f_bb.front().cols());
  for (auto& bb : f_bb) {
    const double norm = (f_rf * bb).norm();
    if (!(norm > 0.0)) throw NumericError("normalize_power: zero product norm");
    bb *= std::sqrt(nu) / norm;
  }
  return f_bb;
}

double sum_rate(const MultiUserChannel& ch, const Eigen::MatrixXcd& f_rf,
                const std::vector<Eigen::MatrixXcd>& f_bb, double noise_power) {
  const int nu = static_cast<int>(ch.users.size());
  const int k = static_cast<int>(f_bb.size());
  if (nu == 0 || k == 0 || ch.users.front().rows() != k) {
    throw DimensionError("sum_rate: channel/beamformer shape mismatch");
  }
  double rate = 0.0;
  for (int kk = 0; kk < k; ++kk) {
    const Eigen::MatrixXcd w = f_rf * f_bb[static_cast<std::size_t>(kk)];  // Nt x Nu
    const double power = w.squaredNorm();
    if (std::abs(power - nu) > 1e-6 * nu) {
      throw DomainError("sum_rate: beamformer is not power-normalized");
    }
    for (int u = 0; u < nu; ++u) {
      const Eigen::RowVectorXcd h = ch.users[static_cast<std::size_t>(u)].row(kk);
      double sig = 0.0, intf = 0.0;
      for (int v = 0; v < nu; ++v) {
        const std::complex<double> z = (h.conjugate() * w.col(v)).value();
        const double p2 = std::norm(z);
        if (v == u) {
          sig = p2;
        } else {
          intf += p2;
        }
      }
      rate += std::log2(1.0 + sig / (intf + noise_power));
    }
  }
  return rate / static_cast<double>(k);
}

HbfModel::HbfModel(HbfConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const int k = cfg_.channel.subcarriers;
  const int nt = cfg_.channel.antennas();
  const int nu = cfg_.users;
  const auto& ov = cfg_.model_overrides;
  enc1_ = EncoderParams::create(
      store_, ov.apply(EncoderConfig::preset(cfg_.model_size, k, 2 * nu * nt, 2 * nu * nt)), rng,
      "enc1.");
  enc2_ = EncoderParams::create(
      store_, ov.apply(EncoderConfig::preset(cfg_.model_size, nu, 2 * k * nt, nt)), rng, "enc2.");
  enc3_ = EncoderParams::create(
      store_, ov.apply(EncoderConfig::preset(cfg_.model_size, k, 2 * nu * nt, 2 * nu * nu)), rng,
      "enc3.");
  if (cfg_.mode == 2) {
    EncoderConfig ue = ov.apply(EncoderConfig::preset(cfg_.model_size, k, 2 * nt, 0));
    ue_enc_ = EncoderParams::create(store_, ue, rng, "ue.");
    std::tie(ue_compress_w_, ue_compress_b_) =
        add_linear_params(store_, "ue.compress", k * ue.d_model, cfg_.codeword_len, rng);
    std::tie(lift_w_, lift_b_) =
        add_linear_params(store_, "lift", nu * cfg_.codeword_len, k * 2 * nu * nt, rng);
  }
}

Tensor HbfModel::input_tokens(const std::vector<Tensor>& p,
                              const std::vector<const MultiUserChannel*>& batch) const {
  const int k = cfg_.channel.subcarriers;
  const int nt = cfg_.channel.antennas();
  const int nu = cfg_.users;
  const auto b = static_cast<Index>(batch.size());
  for (const MultiUserChannel* ch : batch) {
    if (static_cast<int>(ch->users.size()) != nu) {
      throw DimensionError("hbf.input: user count mismatch");
    }
  }
  if (cfg_.mode == 1) {
    return Tensor::from_array({b, k, 2 * nu * nt}, stacked_channels(batch, k, nu, nt));
  }
  // Mode 2: each UE encodes its own channel; the quantized codewords are
  // lifted to the CSI token grid.
  std::vector<Tensor> codewords;
  codewords.reserve(static_cast<std::size_t>(nu));
  for (int u = 0; u < nu; ++u) {
    std::vector<Eigen::MatrixXcd> uh;
    uh.reserve(batch.size());
    for (const MultiUserChannel* ch : batch) uh.push_back(ch->users[static_cast<std::size_t>(u)]);
    Tensor tokens = batch_tokens(uh);  // [B, K, 2Nt]
    Tensor features = encoder_forward(p, ue_enc_, tokens, true);
    Tensor flat = reshape(features, {b, static_cast<Index>(k) * ue_enc_.cfg.d_model});
    Tensor s = sigmoid(linear(flat, p[static_cast<std::size_t>(ue_compress_w_)],
                              p[static_cast<std::size_t>(ue_compress_b_)]));
    codewords.push_back(ste_quantize(s, cfg_.bits));
  }
  Tensor joint = concat(codewords, 1);  // [B, Nu*Ncw]
  Tensor lifted = linear(joint, p[static_cast<std::size_t>(lift_w_)],
                         p[static_cast<std::size_t>(lift_b_)]);
  return reshape(lifted, {b, k, 2 * nu * nt});
}

HbfForward HbfModel::forward(const std::vector<Tensor>& p, const Tensor& x_tokens) const {
  const int k = cfg_.channel.subcarriers;
  const int nt = cfg_.channel.antennas();
  const int nu = cfg_.users;
  const Index b = x_tokens.shape()[0];
  const double inv_sqrt_nt = 1.0 / std::sqrt(static_cast<double>(nt));

  HbfForward f;
  f.f_tokens = head_apply(p, enc1_, encoder_forward(p, enc1_, x_tokens, true));

  // User-major permutation of F: [B,K,Nu,2Nt] -> [B,Nu,K,2Nt] -> [B,Nu,2KNt].
  Tensor f4 = reshape(f.f_tokens, {b, k, nu, 2 * nt});
  Tensor f_perm = reshape(permute_axes(f4, {0, 2, 1, 3}), {b, nu, 2 * k * nt});
  f.phases = head_apply(p, enc2_, encoder_forward(p, enc2_, f_perm, true));
  f.rf_re = scalar_mul(cos(f.phases), inv_sqrt_nt);
  f.rf_im = scalar_mul(sin(f.phases), inv_sqrt_nt);

  Tensor bb_tokens = head_apply(p, enc3_, encoder_forward(p, enc3_, f.f_tokens, true));
  CTensor bb = from_interleaved(bb_tokens);  // [B,K,NuNu]
  Tensor bb_re4 = reshape(bb.re, {b, k, nu, nu});
  Tensor bb_im4 = reshape(bb.im, {b, k, nu, nu});

  // Effective beams, transposed: W^T = F_BB^T F_RF^T, rows are w_u^T.
  CTensor bbT{permute_axes(bb_re4, {0, 1, 3, 2}), permute_axes(bb_im4, {0, 1, 3, 2})};
  CTensor rfT{broadcast_axis(f.rf_re, 1, k), broadcast_axis(f.rf_im, 1, k)};
  CTensor wt = cmatmul(bbT, rfT);  // [B,K,Nu,Nt]

  // Per-subcarrier power normalization ||F_RF F_BB[k]||_F^2 = Nu, applied to
  // the beams and the digital stage with one shared differentiable scale.
  Tensor wr = reshape(wt.re, {b, k, static_cast<Index>(nu) * nt});
  Tensor wi = reshape(wt.im, {b, k, static_cast<Index>(nu) * nt});
  Tensor n2 = add(row_sums(mul(wr, wr)), row_sums(mul(wi, wi)));  // [B,K,1]
  Tensor scale = scalar_mul(rsqrt(n2), std::sqrt(static_cast<double>(nu)));
  f.beam_re = reshape(scale_last(wr, scale), {b, k, nu, nt});
  f.beam_im = reshape(scale_last(wi, scale), {b, k, nu, nt});
  f.bb_re = reshape(scale_last(reshape(bb_re4, {b, k, static_cast<Index>(nu) * nu}), scale),
                    {b, k, nu, nu});
  f.bb_im = reshape(scale_last(reshape(bb_im4, {b, k, static_cast<Index>(nu) * nu}), scale),
                    {b, k, nu, nu});
  return f;
}

Tensor HbfModel::rates(const HbfForward& fwd, const std::vector<const MultiUserChannel*>& batch) const {
  const int k = cfg_.channel.subcarriers;
  const int nt = cfg_.channel.antennas();
  const int nu = cfg_.users;
  const auto b = static_cast<Index>(batch.size());

  Array h_data = stacked_channels(batch, k, nu, nt);
  CTensor h = from_interleaved(Tensor::from_array({b, k, nu, 2 * nt}, std::move(h_data)));
  CTensor h_conj = conj(h);
  CTensor beamT{permute_axes(fwd.beam_re, {0, 1, 3, 2}), permute_axes(fwd.beam_im, {0, 1, 3, 2})};
  CTensor z = cmatmul(h_conj, beamT);  // [B,K,Nu,Nu]; z[u,v] = h_u^H w_v
  Tensor p2 = cabs2(z);

  Array mask(b * k * nu * nu);
  mask.setZero();
  for (Index i = 0; i < b * k; ++i) {
    for (int u = 0; u < nu; ++u) mask[(i * nu + u) * nu + u] = 1.0;
  }
  Tensor sig = row_sums(mul(p2, Tensor::from_array({b, k, nu, nu}, std::move(mask))));
  Tensor intf = sub(row_sums(p2), sig);
  Tensor sinr = div(sig, scalar_add(intf, cfg_.noise_power));
  Tensor terms = log(scalar_add(sinr, 1.0));  // [B,K,Nu,1]
  // Per-sample rate: sum over (k, u), averaged over subcarriers.
  Tensor per_sample = row_sums(reshape(terms, {b, static_cast<Index>(k) * nu}));
  return scalar_mul(per_sample, 1.0 / (kLn2 * static_cast<double>(k)));
}

Tensor HbfModel::batch_neg_rate(const std::vector<Tensor>& p,
                                const std::vector<const MultiUserChannel*>& batch) const {
  const Tensor r = rates(forward(p, input_tokens(p, batch)), batch);
  return scalar_mul(sum_all(r), -1.0 / static_cast<double>(batch.size()));
}

HybridBeamformer HbfModel::beamform(const MultiUserChannel& ch) const {
  const int k = cfg_.channel.subcarriers;
  const int nt = cfg_.channel.antennas();
  const int nu = cfg_.users;
  const std::vector<const MultiUserChannel*> batch{&ch};
  const HbfForward f = forward(store_.values(), input_tokens(store_.values(), batch));

  HybridBeamformer out;
  out.fully_digital.resize(static_cast<std::size_t>(k));
  const double* ft = f.f_tokens.array().data();
  for (int kk = 0; kk < k; ++kk) {
    Eigen::MatrixXcd m(nu, nt);
    for (int u = 0; u < nu; ++u) {
      for (int t = 0; t < nt; ++t) {
        const Index base = ((static_cast<Index>(kk) * nu + u) * nt + t) * 2;
        m(u, t) = {ft[base], ft[base + 1]};
      }
    }
    out.fully_digital[static_cast<std::size_t>(kk)] = std::move(m);
  }
  out.phases.resize(nu, nt);
  out.f_rf.resize(nt, nu);
  for (int u = 0; u < nu; ++u) {
    for (int t = 0; t < nt; ++t) {
      const Index i = static_cast<Index>(u) * nt + t;
      out.phases(u, t) = f.phases.array()[i];
      out.f_rf(t, u) = {f.rf_re.array()[i], f.rf_im.array()[i]};
    }
  }
  out.f_bb.resize(static_cast<std::size_t>(k));
  for (int kk = 0; kk < k; ++kk) {
    Eigen::MatrixXcd bb(nu, nu);
    for (int r = 0; r < nu; ++r) {
      for (int c = 0; c < nu; ++c) {
        const Index base = (static_cast<Index>(kk) * nu + r) * nu + c;
        bb(r, c) = {f.bb_re.array()[base], f.bb_im.array()[base]};
      }
    }
    out.f_bb[static_cast<std::size_t>(kk)] = std::move(bb);
  }
  return out;
}

std::vector<double> HbfModel::eval_rates(const std::vector<MultiUserChannel>& set) const {
  std::vector<double> out;
  out.reserve(set.size());
  const int chunk = 128;
  const auto& p = store_.values();
  for (std::size_t start = 0; start < set.size(); start += chunk) {
    const std::size_t len = std::min<std::size_t>(chunk, set.size() - start);
    std::vector<const MultiUserChannel*> batch;
    batch.reserve(len);
    for (std::size_t i = start; i < start + len; ++i) batch.push_back(&set[i]);
    const Tensor r = rates(forward(p, input_tokens(p, batch)), batch);
    for (Index i = 0; i < r.numel(); ++i) out.push_back(r.array()[i]);
  }
  return out;
}

std::uint64_t HbfModel::forward_flops() const {
  const auto k = static_cast<std::uint64_t>(cfg_.channel.subcarriers);
  const auto nt = static_cast<std::uint64_t>(cfg_.channel.antennas());
  const auto nu = static_cast<std::uint64_t>(cfg_.users);
  std::uint64_t total =
      flop_count(enc1_.cfg).total + flop_count(enc2_.cfg).total + flop_count(enc3_.cfg).total;
  total += 4 * k * nu * nu * nt;  // digital-analog product
  if (cfg_.mode == 2) {
    const auto ncw = static_cast<std::uint64_t>(cfg_.codeword_len);
    total += nu * (flop_count(ue_enc_.cfg).total + k * ue_enc_.cfg.d_model * ncw);
    total += nu * ncw * k * 2 * nu * nt;  // lift
  }
  return total;
}

TrainResult train_hbf(HbfModel& model, const std::vector<MultiUserChannel>& train,
                      const std::vector<MultiUserChannel>& val, const TrainConfig& tc) {
  if (train.empty() || val.empty()) throw ConfigError("train_hbf: empty dataset");
  auto batch_loss = [&](const std::vector<Tensor>& p, const std::vector<int>& batch, Rng&) {
    std::vector<const MultiUserChannel*> ptrs;
    ptrs.reserve(batch.size());
    for (int i : batch) ptrs.push_back(&train[static_cast<std::size_t>(i)]);
    return model.batch_neg_rate(p, ptrs);
  };
  auto validate = [&](const std::vector<Tensor>&) { return eval_hbf_rate(model, val); };
  return run_training(model.params(), tc, static_cast<int>(train.size()), batch_loss, validate,
                      {}, /*lower_is_better=*/false);
}

double eval_hbf_rate(const HbfModel& model, const std::vector<MultiUserChannel>& test) {
  if (test.empty()) throw ConfigError("eval_hbf_rate: empty dataset");
  const std::vector<double> rates = model.eval_rates(test);
  double sum = 0.0;
  for (double r : rates) sum += r;
  return sum / static_cast<double>(rates.size());
}

}  // namespace mtwb
