// SPDX-License-Identifier: Apache-2.0
#include "mtwb/pipeline_ce.hpp"

#include <cmath>

#include "mtwb/errors.hpp"

namespace mtwb {

void CeConfig::validate() const {
  channel.validate();
  if (measurements < 1 || measurements > channel.antennas()) {
    throw ConfigError("ce.measurements: must be in [1, Nt]");
  }
  if (train_snrs_db.empty()) throw ConfigError("ce.train_snrs_db: must be non-empty");
}

CeModel::CeModel(CeConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const int m = cfg_.measurements;
  const int nt = cfg_.channel.antennas();
  // Complex Gaussian pilot rows, renormalized to unit power below.
  Array re(static_cast<Index>(m) * nt), im(static_cast<Index>(m) * nt);
  for (Index i = 0; i < re.size(); ++i) {
    const auto z = rng.cnormal();
    re[i] = z.real();
    im[i] = z.imag();
  }
  pilot_re_ = store_.add("pilot.re", Tensor::from_array({m, nt}, std::move(re)));
  pilot_im_ = store_.add("pilot.im", Tensor::from_array({m, nt}, std::move(im)));
  renormalize_pilot();

  EncoderConfig enc = cfg_.model_overrides.apply(
      EncoderConfig::preset(cfg_.model_size, cfg_.channel.subcarriers, 2 * m, 2 * nt));
  estimator_ = EncoderParams::create(store_, enc, rng, "est.");
}

Tensor CeModel::measure(const std::vector<Tensor>& p, const Tensor& h_tokens, double snr_db,
                        Rng* noise_rng) const {
  const int nt = cfg_.channel.antennas();
  if (h_tokens.rank() != 3 || h_tokens.shape()[2] != 2 * nt ||
      h_tokens.shape()[1] != cfg_.channel.subcarriers) {
    throw DimensionError("ce.measure: bad channel tokens " + shape_str(h_tokens.shape()));
  }
  const CTensor h = from_interleaved(h_tokens);  // [B, K, Nt] pair
  const CTensor a{p[static_cast<std::size_t>(pilot_re_)], p[static_cast<std::size_t>(pilot_im_)]};
  // Y[b,k,:] = (A h[b,k])^T = h[b,k]^T A^T.
  const CTensor at{transpose(a.re), transpose(a.im)};
  CTensor y = cmatmul(h, at);  // [B, K, M]
  Tensor tokens = to_interleaved(y);
  if (std::isinf(snr_db) && snr_db > 0.0) return tokens;
  if (noise_rng == nullptr) throw ConfigError("ce.measure: finite SNR requires a noise stream");
  // Per-sample noise power from that sample's mean received energy; the draw
  // is a constant on the tape.
  const Index b = tokens.shape()[0];
  const Index per = tokens.shape()[1] * tokens.shape()[2];
  Array noise(tokens.numel());
  const double snr_lin = std::pow(10.0, snr_db / 10.0);
  for (Index i = 0; i < b; ++i) {
    Eigen::Map<const Array> sample(tokens.array().data() + i * per, per);
    const double power = 2.0 * sample.square().mean();  // per complex entry
    const double sigma_half = std::sqrt(power / snr_lin / 2.0);
    for (Index j = 0; j < per; ++j) noise[i * per + j] = sigma_half * noise_rng->normal();
  }
  return add(tokens, Tensor::from_array(tokens.shape(), std::move(noise)));
}

Tensor CeModel::reconstruct(const std::vector<Tensor>& p, const Tensor& y_tokens) const {
  return head_apply(p, estimator_, encoder_forward(p, estimator_, y_tokens, true));
}

Tensor CeModel::batch_loss(const std::vector<Tensor>& p, const Tensor& h_tokens, double snr_db,
                           Rng& rng) const {
  const Tensor y = measure(p, h_tokens, snr_db, &rng);
  const Tensor h_hat = reconstruct(p, y);
  const Tensor diff = sub(h_hat, h_tokens);
  return scalar_mul(sum_all(mul(diff, diff)), 1.0 / static_cast<double>(h_tokens.shape()[0]));
}

Eigen::MatrixXcd CeModel::pilot_matrix() const {
  const Tensor& re = store_.value(pilot_re_);
  const Tensor& im = store_.value(pilot_im_);
  const int m = cfg_.measurements, nt = cfg_.channel.antennas();
  Eigen::MatrixXcd a(m, nt);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < nt; ++c) {
      a(r, c) = {re.array()[r * nt + c], im.array()[r * nt + c]};
    }
  }
  return a;
}

Measurement CeModel::pilot_project(const Eigen::MatrixXcd& h, double snr_db, Rng& rng) const {
  if (h.rows() != cfg_.channel.subcarriers || h.cols() != cfg_.channel.antennas()) {
    throw DimensionError("ce.pilot_project: channel shape mismatch");
  }
  Eigen::MatrixXcd y = h * pilot_matrix().transpose();  // K x M
  return Measurement{awgn(y, snr_db, rng)};
}

Eigen::MatrixXcd CeModel::estimate(const Measurement& m) const {
  if (m.y.rows() != cfg_.channel.subcarriers || m.y.cols() != cfg_.measurements) {
    throw DimensionError("ce.estimate: measurement shape mismatch");
  }
  Tensor tokens = reshape(tokens_from_cmatrix(m.y),
                          {1, cfg_.channel.subcarriers, 2 * cfg_.measurements});
  Tensor out = reconstruct(store_.values(), tokens);
  return unbatch_tokens(out).front();
}

void CeModel::renormalize_pilot() {
  const Tensor& re = store_.value(pilot_re_);
  const Tensor& im = store_.value(pilot_im_);
  const int m = cfg_.measurements, nt = cfg_.channel.antennas();
  Array nr = re.array(), ni = im.array();
  for (int r = 0; r < m; ++r) {
    Eigen::Map<Array> rr(nr.data() + static_cast<Index>(r) * nt, nt);
    Eigen::Map<Array> ri(ni.data() + static_cast<Index>(r) * nt, nt);
    const double norm = std::sqrt(rr.square().sum() + ri.square().sum());
    if (norm <= 0.0) throw NumericError("ce.pilot: zero-norm pilot row");
    rr /= norm;
    ri /= norm;
  }
  store_.set_value(pilot_re_, Tensor::from_array({m, nt}, std::move(nr)));
  store_.set_value(pilot_im_, Tensor::from_array({m, nt}, std::move(ni)));
}

std::uint64_t CeModel::forward_flops() const {
  const auto k = static_cast<std::uint64_t>(cfg_.channel.subcarriers);
  const auto nt = static_cast<std::uint64_t>(cfg_.channel.antennas());
  const auto m = static_cast<std::uint64_t>(cfg_.measurements);
  return 4 * k * nt * m + flop_count(estimator_.cfg).total;
}

Tensor gather_channel_tokens(const Dataset& ds, const std::vector<int>& idx) {
  std::vector<Eigen::MatrixXcd> mats;
  mats.reserve(idx.size());
  for (int i : idx) mats.push_back(ds.samples.at(static_cast<std::size_t>(i)).h);
  return batch_tokens(mats);
}

TrainResult train_ce(CeModel& model, const Dataset& train, const Dataset& val,
                     const TrainConfig& tc) {
  if (train.config != model.cfg().channel || val.config != model.cfg().channel) {
    throw ConfigError("train_ce: dataset channel config does not match the model");
  }
  const auto& snrs = model.cfg().train_snrs_db;
  auto batch_loss = [&](const std::vector<Tensor>& p, const std::vector<int>& batch, Rng& rng) {
    const double snr = snrs[static_cast<std::size_t>(rng.below(snrs.size()))];
    return model.batch_loss(p, gather_channel_tokens(train, batch), snr, rng);
  };
  auto validate = [&](const std::vector<Tensor>&) {
    return eval_ce_nmse(model, val, model.cfg().val_snr_db, 0xCE11u);
  };
  return run_training(model.params(), tc, static_cast<int>(train.size()), batch_loss, validate,
                      [&] { model.renormalize_pilot(); });
}

double eval_ce_nmse(const CeModel& model, const Dataset& test, double snr_db,
                    std::uint64_t noise_seed) {
  if (test.samples.empty()) throw ConfigError("eval_ce_nmse: empty dataset");
  const Eigen::MatrixXcd pilot_t = model.pilot_matrix().transpose();
  std::vector<Eigen::MatrixXcd> estimates, truths;
  estimates.reserve(test.size());
  const int chunk = 256;
  const int n = static_cast<int>(test.size());
  for (int start = 0; start < n; start += chunk) {
    const int len = std::min(chunk, n - start);
    std::vector<Eigen::MatrixXcd> ys;
    ys.reserve(static_cast<std::size_t>(len));
    for (int i = start; i < start + len; ++i) {
      Rng rng = Rng::stream(noise_seed, static_cast<std::uint64_t>(i));
      ys.push_back(awgn(test.samples[static_cast<std::size_t>(i)].h * pilot_t, snr_db, rng));
    }
    Tensor out = model.reconstruct(model.params().values(), batch_tokens(ys));
    for (auto& h_hat : unbatch_tokens(out)) estimates.push_back(std::move(h_hat));
  }
  for (const auto& s : test.samples) truths.push_back(s.h);
  return nmse_db(estimates, truths);
}

}  // namespace mtwb
