// SPDX-License-Identifier: Apache-2.0
#include "mtwb/baselines.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "mtwb/errors.hpp"

namespace mtwb {

AngularDictionary AngularDictionary::build(const ChannelConfig& cfg, int oversampling) {
  if (oversampling < 1) throw ConfigError("dictionary.oversampling: must be >= 1");
  const int gx = oversampling * cfg.nx;
  const int gy = oversampling * cfg.ny;
  const int nt = cfg.antennas();
  AngularDictionary d;
  d.atoms.resize(nt, static_cast<Eigen::Index>(gx) * gy);
  d.grid_uv.reserve(static_cast<std::size_t>(gx) * gy);
  const double scale = 1.0 / std::sqrt(static_cast<double>(nt));
  int col = 0;
  for (int i = 0; i < gx; ++i) {
    const double u = -1.0 + 2.0 * i / gx;
    for (int j = 0; j < gy; ++j) {
      const double v = -1.0 + 2.0 * j / gy;
      for (int ix = 0; ix < cfg.nx; ++ix) {
        for (int iy = 0; iy < cfg.ny; ++iy) {
          const double phase = 2.0 * M_PI * cfg.spacing * (ix * u + iy * v);
          d.atoms(ix * cfg.ny + iy, col) = std::polar(scale, phase);
        }
      }
      d.grid_uv.emplace_back(u, v);
      ++col;
    }
  }
  return d;
}

Eigen::MatrixXcd somp_estimate(const Eigen::MatrixXcd& y, const Eigen::MatrixXcd& pilots,
                               const AngularDictionary& dict, int sparsity, SompReport* report) {
  const int k = static_cast<int>(y.rows());
  const int m = static_cast<int>(y.cols());
  if (pilots.rows() != m) throw DimensionError("somp: pilot rows must match measurement count");
  if (sparsity < 1 || sparsity > m) {
    throw ConfigError("somp.sparsity: must be in [1, M=" + std::to_string(m) + "]");
  }
  const Eigen::MatrixXcd sensing = pilots * dict.atoms;  // M x G
  const int g = static_cast<int>(sensing.cols());

  Eigen::MatrixXcd residual = y.transpose();  // M x K
  if (report != nullptr) {
    report->support.clear();
    report->residual_norms.assign(1, residual.norm());
  }
  if (residual.norm() == 0.0) return Eigen::MatrixXcd::Zero(k, pilots.cols());

  const Eigen::VectorXd col_power = sensing.colwise().squaredNorm();
  std::vector<int> support;
  std::vector<char> used(static_cast<std::size_t>(g), 0);
  Eigen::MatrixXcd coeffs;
  for (int it = 0; it < sparsity; ++it) {
    // Aggregate correlation across all K measurement vectors, normalized by
    // atom energy in measurement space.
    const Eigen::MatrixXcd corr = sensing.adjoint() * residual;  // G x K
    int best = -1;
    double best_score = -1.0;
    for (int a = 0; a < g; ++a) {
      if (used[static_cast<std::size_t>(a)] || col_power[a] <= 0.0) continue;
      const double score = corr.row(a).squaredNorm() / col_power[a];
      if (score > best_score) {
        best_score = score;
        best = a;
      }
    }
    if (best < 0) break;
    used[static_cast<std::size_t>(best)] = 1;
    support.push_back(best);

    Eigen::MatrixXcd selected(m, support.size());
    for (std::size_t s = 0; s < support.size(); ++s) selected.col(static_cast<Eigen::Index>(s)) = sensing.col(support[s]);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(selected);
    if (qr.rank() < static_cast<Eigen::Index>(support.size())) {
      std::string atoms;
      for (int s : support) atoms += std::to_string(s) + " ";
      throw NumericError("somp: rank-deficient support solve over atoms [ " + atoms + "]");
    }
    coeffs = qr.solve(y.transpose());  // |S| x K
    residual = y.transpose() - selected * coeffs;
    if (report != nullptr) {
      report->support = support;
      report->residual_norms.push_back(residual.norm());
    }
  }

  Eigen::MatrixXcd basis(dict.atoms.rows(), support.size());
  for (std::size_t s = 0; s < support.size(); ++s) basis.col(static_cast<Eigen::Index>(s)) = dict.atoms.col(support[s]);
  return (basis * coeffs).transpose();  // K x Nt
}

Eigen::MatrixXcd ls_estimate(const Eigen::MatrixXcd& y, const Eigen::MatrixXcd& pilots,
                             double ridge) {
  if (ridge < 0.0) throw ConfigError("ls.ridge: must be >= 0");
  const int nt = static_cast<int>(pilots.cols());
  if (y.cols() != pilots.rows()) throw DimensionError("ls: measurement/pilot shape mismatch");
  const Eigen::MatrixXcd gram =
      pilots.adjoint() * pilots + ridge * Eigen::MatrixXcd::Identity(nt, nt);
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(gram);
  if (!lu.isInvertible()) {
    throw NumericError("ls: singular normal equations (ridge=" + std::to_string(ridge) + ")");
  }
  // All K subcarriers share one factorization.
  const Eigen::MatrixXcd rhs = pilots.adjoint() * y.transpose();  // Nt x K
  return lu.solve(rhs).transpose();                               // K x Nt
}

std::vector<Eigen::MatrixXcd> fully_digital_precoder(const MultiUserChannel& ch) {
  const int nu = static_cast<int>(ch.users.size());
  if (nu == 0) throw DimensionError("fully_digital_precoder: no users");
  const int k = static_cast<int>(ch.users.front().rows());
  const int nt = static_cast<int>(ch.users.front().cols());
  std::vector<Eigen::MatrixXcd> f(static_cast<std::size_t>(k));
  for (int kk = 0; kk < k; ++kk) {
    Eigen::MatrixXcd hk(nu, nt);  // row u = h_u^H
    for (int u = 0; u < nu; ++u) hk.row(u) = ch.users[static_cast<std::size_t>(u)].row(kk).conjugate();
    const Eigen::MatrixXcd gram = hk * hk.adjoint();
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(gram);
    if (!lu.isInvertible()) {
      throw NumericError("fully_digital_precoder: rank-deficient channel at subcarrier " +
                         std::to_string(kk));
    }
    Eigen::MatrixXcd zf = hk.adjoint() * lu.inverse();  // Nt x Nu
    const double norm = zf.norm();
    if (!(norm > 0.0)) throw NumericError("fully_digital_precoder: zero precoder norm");
    f[static_cast<std::size_t>(kk)] = zf * (std::sqrt(static_cast<double>(nu)) / norm);
  }
  return f;
}

HybridFactors ss_hp(const std::vector<Eigen::MatrixXcd>& f_opt, const AngularDictionary& dict,
                    int rf_chains) {
  if (f_opt.empty()) throw DimensionError("ss_hp: empty target");
  const int g = dict.size();
  if (rf_chains < 1 || rf_chains > g) throw ConfigError("ss_hp.rf_chains: must be in [1, G]");
  const int k = static_cast<int>(f_opt.size());
  const int nt = static_cast<int>(f_opt.front().rows());
  if (dict.atoms.rows() != nt) throw DimensionError("ss_hp: dictionary antenna count mismatch");

  std::vector<Eigen::MatrixXcd> residual = f_opt;
  std::vector<int> support;
  std::vector<char> used(static_cast<std::size_t>(g), 0);
  HybridFactors out;
  out.f_bb.assign(static_cast<std::size_t>(k), Eigen::MatrixXcd());
  for (int it = 0; it < rf_chains; ++it) {
    int best = -1;
    double best_score = -1.0;
    for (int a = 0; a < g; ++a) {
      if (used[static_cast<std::size_t>(a)]) continue;
      double score = 0.0;
      for (int kk = 0; kk < k; ++kk) {
        score += (dict.atoms.col(a).adjoint() * residual[static_cast<std::size_t>(kk)]).squaredNorm();
      }
      if (score > best_score) {
        best_score = score;
        best = a;
      }
    }
    used[static_cast<std::size_t>(best)] = 1;
    support.push_back(best);

    Eigen::MatrixXcd rf(nt, support.size());
    for (std::size_t s = 0; s < support.size(); ++s) rf.col(static_cast<Eigen::Index>(s)) = dict.atoms.col(support[s]);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(rf);
    if (qr.rank() < static_cast<Eigen::Index>(support.size())) {
      throw NumericError("ss_hp: rank-deficient analog stage");
    }
    for (int kk = 0; kk < k; ++kk) {
      out.f_bb[static_cast<std::size_t>(kk)] = qr.solve(f_opt[static_cast<std::size_t>(kk)]);
      residual[static_cast<std::size_t>(kk)] =
          f_opt[static_cast<std::size_t>(kk)] - rf * out.f_bb[static_cast<std::size_t>(kk)];
    }
    out.f_rf = rf;
  }
  out.f_bb = normalize_power(out.f_rf, std::move(out.f_bb));
  return out;
}

double ss_hp_rate(const MultiUserChannel& ch, const HybridFactors& f, double noise_power) {
  return sum_rate(ch, f.f_rf, f.f_bb, noise_power);
}

MlpFeedbackModel::MlpFeedbackModel(CsiConfig cfg, std::array<int, 3> widths, std::uint64_t seed)
    : FeedbackModel(std::move(cfg)), widths_(widths) {
  if (widths_[0] < 1 || widths_[1] < 1) throw ConfigError("mlp.widths: must be positive");
  if (widths_[2] != cfg_.codeword_len) {
    throw ConfigError("mlp.widths: final encoder width must equal csi.codeword_len");
  }
  Rng rng(seed);
  const int in = cfg_.channel.subcarriers * 2 * cfg_.channel.antennas();
  enc_layers_[0] = add_linear_params(store_, "enc.fc0", in, widths_[0], rng);
  enc_layers_[1] = add_linear_params(store_, "enc.fc1", widths_[0], widths_[1], rng);
  enc_layers_[2] = add_linear_params(store_, "enc.fc2", widths_[1], widths_[2], rng);
  dec_layers_[0] = add_linear_params(store_, "dec.fc0", cfg_.codeword_len, widths_[1], rng);
  dec_layers_[1] = add_linear_params(store_, "dec.fc1", widths_[1], widths_[0], rng);
  dec_layers_[2] = add_linear_params(store_, "dec.fc2", widths_[0], in, rng);
}

Tensor MlpFeedbackModel::encode(const std::vector<Tensor>& p, const Tensor& h_tokens) const {
  const Index b = h_tokens.shape()[0];
  const Index in = h_tokens.shape()[1] * h_tokens.shape()[2];
  Tensor h = reshape(h_tokens, {b, in});
  h = relu(linear(h, p[static_cast<std::size_t>(enc_layers_[0].first)],
                  p[static_cast<std::size_t>(enc_layers_[0].second)]));
  h = relu(linear(h, p[static_cast<std::size_t>(enc_layers_[1].first)],
                  p[static_cast<std::size_t>(enc_layers_[1].second)]));
  return sigmoid(linear(h, p[static_cast<std::size_t>(enc_layers_[2].first)],
                        p[static_cast<std::size_t>(enc_layers_[2].second)]));
}

Tensor MlpFeedbackModel::decode(const std::vector<Tensor>& p, const Tensor& s_hat) const {
  const Index b = s_hat.shape()[0];
  Tensor h = relu(linear(s_hat, p[static_cast<std::size_t>(dec_layers_[0].first)],
                         p[static_cast<std::size_t>(dec_layers_[0].second)]));
  h = relu(linear(h, p[static_cast<std::size_t>(dec_layers_[1].first)],
                  p[static_cast<std::size_t>(dec_layers_[1].second)]));
  h = linear(h, p[static_cast<std::size_t>(dec_layers_[2].first)],
             p[static_cast<std::size_t>(dec_layers_[2].second)]);
  return reshape(h, {b, cfg_.channel.subcarriers, 2 * cfg_.channel.antennas()});
}

std::uint64_t MlpFeedbackModel::forward_flops() const {
  const auto in = static_cast<std::uint64_t>(cfg_.channel.subcarriers) * 2 * cfg_.channel.antennas();
  const auto w0 = static_cast<std::uint64_t>(widths_[0]);
  const auto w1 = static_cast<std::uint64_t>(widths_[1]);
  const auto ncw = static_cast<std::uint64_t>(cfg_.codeword_len);
  return in * w0 + w0 * w1 + w1 * ncw + ncw * w1 + w1 * w0 + w0 * in;
}

std::int64_t MlpFeedbackModel::expected_param_count(const CsiConfig& cfg, std::array<int, 3> widths) {
  const std::int64_t in = static_cast<std::int64_t>(cfg.channel.subcarriers) * 2 * cfg.channel.antennas();
  const std::int64_t w0 = widths[0], w1 = widths[1], ncw = widths[2];
  std::int64_t n = 0;
  n += in * w0 + w0;
  n += w0 * w1 + w1;
  n += w1 * ncw + ncw;
  n += ncw * w1 + w1;
  n += w1 * w0 + w0;
  n += w0 * in + in;
  return n;
}

}  // namespace mtwb
