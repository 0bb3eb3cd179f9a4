// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtwb/channel.hpp"
#include "mtwb/trainer.hpp"
#include "mtwb/transformer.hpp"

namespace mtwb {

struct ModelSpec {
  char preset = 'S';  // S | M | L
  ModelOverrides overrides;
};

struct DataSpec {
  std::filesystem::path dir = "data";
  int train = 5000;
  int val = 500;
  int test = 500;
};

struct CeSpec {
  double ratio = 0.375;  // M / Nt
  std::vector<double> snrs_db = {0, 5, 10, 15, 20};
  std::vector<double> train_snrs_db = {0, 5, 10, 15, 20};
  double val_snr_db = 10.0;
  int somp_sparsity = -1;  // -1: one atom per cluster
  double ls_ridge = 1.0;
};

struct CsiSpec {
  int codeword_len = 16;
  int bits = 2;
  std::array<int, 3> mlp_widths = {256, 128, 16};  // last must equal codeword_len
};

struct HbfSpec {
  int users = 2;
  int mode = 1;
  int codeword_len = 8;  // per UE, mode 2
  int bits = 1;
  double noise_power = 1.0;
};

struct ExperimentConfig {
  std::string preset = "desk";  // desk | paper-full
  std::string pipeline = "ce";  // ce | csi | hbf
  ChannelConfig channel;        // filled from preset, overridable
  ModelSpec model;
  TrainConfig train;
  DataSpec data;
  std::uint64_t seed = 1;
  std::filesystem::path out = "runs/out";
  bool baselines = true;
  CeSpec ce;
  CsiSpec csi;
  HbfSpec hbf;

  int ce_measurements() const;  // round(ratio * Nt)

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  static ExperimentConfig preset_config(const std::string& preset, const std::string& pipeline);
};

// FNV-1a over the canonical JSON form; identifies a run's inputs.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace mtwb
