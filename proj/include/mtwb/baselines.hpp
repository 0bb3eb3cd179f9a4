// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <vector>

#include "mtwb/channel.hpp"
#include "mtwb/pipeline_csi.hpp"
#include "mtwb/pipeline_hbf.hpp"

namespace mtwb {

// Steering vectors on a uniform sin-space grid, 2x oversampled per UPA axis
// by default. Columns are unit-norm.
struct AngularDictionary {
  Eigen::MatrixXcd atoms;  // Nt x G
  std::vector<std::pair<double, double>> grid_uv;  // (sin az cos el, sin el) per atom

  static AngularDictionary build(const ChannelConfig& cfg, int oversampling = 2);
  int size() const { return static_cast<int>(atoms.cols()); }
};

struct SompReport {
  std::vector<int> support;              // selected atoms in pick order
  std::vector<double> residual_norms;    // ||R||_F after each iteration (index 0 = initial)
};

// Simultaneous OMP across the K subcarrier measurement vectors: one shared
// support, per-subcarrier least-squares refit each iteration.
// y: K x M received pilots, pilots: M x Nt, returns K x Nt.
Eigen::MatrixXcd somp_estimate(const Eigen::MatrixXcd& y, const Eigen::MatrixXcd& pilots,
                               const AngularDictionary& dict, int sparsity,
                               SompReport* report = nullptr);

// Per-subcarrier ridge least squares (A^H A + ridge I)^-1 A^H y_k.
Eigen::MatrixXcd ls_estimate(const Eigen::MatrixXcd& y, const Eigen::MatrixXcd& pilots,
                             double ridge);

// Per-subcarrier zero-forcing reference, power-normalized to ||F[k]||_F^2 =
// Nu with a common per-subcarrier scale (preserves the zero cross terms).
std::vector<Eigen::MatrixXcd> fully_digital_precoder(const MultiUserChannel& ch);

struct HybridFactors {
  Eigen::MatrixXcd f_rf;               // Nt x N_rf, dictionary atoms
  std::vector<Eigen::MatrixXcd> f_bb;  // K of N_rf x Nu, power-normalized
};

// Orthogonal-matching-pursuit factorization of a fully-digital target into a
// shared frequency-flat analog stage and per-subcarrier digital stages.
// f_opt: K matrices of Nt x Nu.
HybridFactors ss_hp(const std::vector<Eigen::MatrixXcd>& f_opt, const AngularDictionary& dict,
                    int rf_chains);

double ss_hp_rate(const MultiUserChannel& ch, const HybridFactors& f, double noise_power);

// Three fully-connected layers per side; drop-in replacement for the
// transformer feedback model (same quantizer, same training entry point).
// widths = the three encoder layer output sizes; the last must equal N_cw,
// the decoder mirrors them.
class MlpFeedbackModel final : public FeedbackModel {
 public:
  MlpFeedbackModel(CsiConfig cfg, std::array<int, 3> widths, std::uint64_t seed);
  Tensor encode(const std::vector<Tensor>& p, const Tensor& h_tokens) const override;
  Tensor decode(const std::vector<Tensor>& p, const Tensor& s_hat) const override;
  std::uint64_t forward_flops() const override;
  const char* scheme_name() const override { return "csi-mlp"; }

  static std::int64_t expected_param_count(const CsiConfig& cfg, std::array<int, 3> widths);

 private:
  std::array<int, 3> widths_;
  std::array<std::pair<int, int>, 3> enc_layers_;
  std::array<std::pair<int, int>, 3> dec_layers_;
};

}  // namespace mtwb
