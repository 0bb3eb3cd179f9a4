// SPDX-License-Identifier: Apache-2.0
#include "mtwb/channel.hpp"

#include <cmath>

#include "mtwb/errors.hpp"

namespace mtwb {

void ChannelConfig::validate() const {
  if (nx < 1) throw ConfigError("channel.nx: must be >= 1");
  if (ny < 1) throw ConfigError("channel.ny: must be >= 1");
  if (subcarriers < 1) throw ConfigError("channel.subcarriers: must be >= 1");
  if (clusters < 1) throw ConfigError("channel.clusters: must be >= 1");
  if (paths_per_cluster < 1) throw ConfigError("channel.paths_per_cluster: must be >= 1");
  if (angle_spread_deg < 0.0) throw ConfigError("channel.angle_spread_deg: must be >= 0");
  if (max_delay < 1.0) throw ConfigError("channel.max_delay: must be >= 1");
  if (spacing <= 0.0) throw ConfigError("channel.spacing: must be > 0");
}

ChannelConfig ChannelConfig::desk() { return ChannelConfig{}; }

ChannelConfig ChannelConfig::paper_full() {
  ChannelConfig c;
  c.nx = 8;
  c.ny = 8;
  c.subcarriers = 32;
  return c;
}

Eigen::VectorXcd upa_steering(double azimuth, double elevation, const ChannelConfig& cfg) {
  const int nt = cfg.antennas();
  const double scale = 1.0 / std::sqrt(static_cast<double>(nt));
  const double fx = 2.0 * M_PI * cfg.spacing * std::sin(azimuth) * std::cos(elevation);
  const double fy = 2.0 * M_PI * cfg.spacing * std::sin(elevation);
  Eigen::VectorXcd a(nt);
  for (int ix = 0; ix < cfg.nx; ++ix) {
    for (int iy = 0; iy < cfg.ny; ++iy) {
      const double phase = fx * ix + fy * iy;
      a[ix * cfg.ny + iy] = std::polar(scale, phase);
    }
  }
  return a;
}

std::vector<ClusterMeta> draw_channel_meta(const ChannelConfig& cfg, Rng& rng) {
  const double spread = cfg.angle_spread_deg * M_PI / 180.0;
  std::vector<ClusterMeta> meta(static_cast<std::size_t>(cfg.clusters));
  for (auto& c : meta) {
    c.azimuth = rng.uniform(-M_PI / 2.0, M_PI / 2.0);
    c.elevation = rng.uniform(-M_PI / 4.0, M_PI / 4.0);
    c.delay = rng.uniform(0.0, cfg.max_delay - 1.0);
    c.path_offset_az.resize(static_cast<std::size_t>(cfg.paths_per_cluster));
    c.path_offset_el.resize(static_cast<std::size_t>(cfg.paths_per_cluster));
    c.gains.resize(static_cast<std::size_t>(cfg.paths_per_cluster));
    for (int p = 0; p < cfg.paths_per_cluster; ++p) {
      c.path_offset_az[static_cast<std::size_t>(p)] = rng.uniform(-spread, spread);
      c.path_offset_el[static_cast<std::size_t>(p)] = rng.uniform(-spread, spread);
      c.gains[static_cast<std::size_t>(p)] = rng.cnormal();
    }
  }
  return meta;
}

Eigen::MatrixXcd assemble_channel(const ChannelConfig& cfg, const std::vector<ClusterMeta>& meta) {
  const int k = cfg.subcarriers;
  const int nt = cfg.antennas();
  // Normalization makes E||H||_F^2 = K * Nt: each path contributes unit
  // expected row energy, so divide by the path count and scale up by Nt.
  const double norm = std::sqrt(static_cast<double>(nt) /
                                (static_cast<double>(cfg.clusters) * cfg.paths_per_cluster));
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(k, nt);
  for (const auto& c : meta) {
    Eigen::RowVectorXcd cluster_row = Eigen::RowVectorXcd::Zero(nt);
    for (std::size_t p = 0; p < c.gains.size(); ++p) {
      const Eigen::VectorXcd a =
          upa_steering(c.azimuth + c.path_offset_az[p], c.elevation + c.path_offset_el[p], cfg);
      cluster_row += c.gains[p] * a.transpose();
    }
    for (int kk = 0; kk < k; ++kk) {
      const std::complex<double> rot = std::polar(1.0, -2.0 * M_PI * kk * c.delay / k);
      h.row(kk) += rot * cluster_row;
    }
  }
  return norm * h;
}

ChannelSample gen_channel(const ChannelConfig& cfg, Rng& rng) {
  cfg.validate();
  ChannelSample s;
  s.clusters = draw_channel_meta(cfg, rng);
  s.h = assemble_channel(cfg, s.clusters);
  return s;
}

Eigen::MatrixXcd awgn(const Eigen::MatrixXcd& signal, double snr_db, Rng& rng) {
  if (std::isinf(snr_db) && snr_db > 0.0) return signal;
  const double power = signal.squaredNorm() / static_cast<double>(signal.size());
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  Eigen::MatrixXcd out(signal.rows(), signal.cols());
  for (Eigen::Index r = 0; r < signal.rows(); ++r) {
    for (Eigen::Index c = 0; c < signal.cols(); ++c) {
      out(r, c) = signal(r, c) + sigma * rng.cnormal();
    }
  }
  return out;
}

double nmse_db(const std::vector<Eigen::MatrixXcd>& estimates,
               const std::vector<Eigen::MatrixXcd>& truth) {
  if (estimates.size() != truth.size() || truth.empty()) {
    throw DimensionError("nmse_db: batch sizes differ or empty");
  }
  double mean_ratio = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (estimates[i].rows() != truth[i].rows() || estimates[i].cols() != truth[i].cols()) {
      throw DimensionError("nmse_db: shape mismatch in batch element " + std::to_string(i));
    }
    const double ref = truth[i].squaredNorm();
    if (ref <= 0.0) throw DomainError("nmse_db: zero-norm reference channel");
    mean_ratio += (estimates[i] - truth[i]).squaredNorm() / ref;
  }
  mean_ratio /= static_cast<double>(truth.size());
  if (mean_ratio <= 0.0) return -300.0;
  return std::max(10.0 * std::log10(mean_ratio), -300.0);
}

double nmse_db(const Eigen::MatrixXcd& estimate, const Eigen::MatrixXcd& truth) {
  return nmse_db(std::vector<Eigen::MatrixXcd>{estimate}, std::vector<Eigen::MatrixXcd>{truth});
}

}  // namespace mtwb
