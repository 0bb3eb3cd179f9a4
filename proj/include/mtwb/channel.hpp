// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <complex>
#include <vector>

#include "mtwb/rng.hpp"

namespace mtwb {

// Clustered geometric wideband channel for a half-wavelength uniform planar
// array. Antennas index x-major: t = ix * ny + iy.
struct ChannelConfig {
  int nx = 4;
  int ny = 4;
  int subcarriers = 8;           // K
  int clusters = 6;              // N_c
  int paths_per_cluster = 10;    // N_p
  double angle_spread_deg = 3.75;  // half-width of the per-path offset
  double max_delay = 8.0;        // D, in sample periods
  double spacing = 0.5;          // antenna spacing in wavelengths

  int antennas() const { return nx * ny; }
  void validate() const;

  static ChannelConfig desk();        // 4x4 array, K=8
  static ChannelConfig paper_full();  // 8x8 array, K=32

  bool operator==(const ChannelConfig&) const = default;
};

// Everything random about one sample; the channel matrix is a deterministic
// function of (config, meta), so samples regenerate bit-exactly.
struct ClusterMeta {
  double azimuth = 0.0;    // cluster center, radians
  double elevation = 0.0;
  double delay = 0.0;      // sample periods, in [0, D-1]
  std::vector<double> path_offset_az;  // per path, radians
  std::vector<double> path_offset_el;
  std::vector<std::complex<double>> gains;  // per path, CN(0,1)
};

struct ChannelSample {
  Eigen::MatrixXcd h;  // K x Nt
  std::vector<ClusterMeta> clusters;
};

// Steering vector with unit-magnitude entries scaled by 1/sqrt(Nt); entry
// (ix, iy) has phase 2*pi*spacing*(ix*sin(az)*cos(el) + iy*sin(el)).
Eigen::VectorXcd upa_steering(double azimuth, double elevation, const ChannelConfig& cfg);

std::vector<ClusterMeta> draw_channel_meta(const ChannelConfig& cfg, Rng& rng);
Eigen::MatrixXcd assemble_channel(const ChannelConfig& cfg, const std::vector<ClusterMeta>& meta);
ChannelSample gen_channel(const ChannelConfig& cfg, Rng& rng);

// Circularly-symmetric complex AWGN at the given SNR relative to the mean
// per-entry signal power. snr_db = +infinity returns the signal unchanged.
Eigen::MatrixXcd awgn(const Eigen::MatrixXcd& signal, double snr_db, Rng& rng);

// 10*log10(E[ ||H - Hhat||_F^2 / ||H||_F^2 ]) over the batch, floored at
// -300 dB. A zero-norm reference raises DomainError.
double nmse_db(const std::vector<Eigen::MatrixXcd>& estimates,
               const std::vector<Eigen::MatrixXcd>& truth);
double nmse_db(const Eigen::MatrixXcd& estimate, const Eigen::MatrixXcd& truth);

}  // namespace mtwb
