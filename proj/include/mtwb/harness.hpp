// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mtwb/config.hpp"
#include "mtwb/dataset.hpp"
#include "mtwb/results.hpp"

namespace mtwb {

struct DatasetPaths {
  std::filesystem::path train, val, test;
};

// Generates any missing dataset files under cfg.data.dir; names carry the
// channel-config hash so mismatched configs never collide.
DatasetPaths ensure_datasets(const ExperimentConfig& cfg);

struct RunOutputs {
  std::filesystem::path out_dir;
  std::filesystem::path results_csv;
  std::filesystem::path manifest;
  std::filesystem::path checkpoint;
  std::vector<ResultRecord> records;
};

// generate -> train -> evaluate for the configured pipeline. The output
// directory is locked with a RUNNING marker for the duration; a marker left
// behind flags a partial run and blocks re-use until removed.
RunOutputs run(const ExperimentConfig& cfg);

// Trains only: checkpoint + per-epoch training log + manifest.
std::filesystem::path train_stage(const ExperimentConfig& cfg);
// Evaluates a checkpoint produced by train_stage (or run).
std::vector<ResultRecord> eval_stage(const ExperimentConfig& cfg,
                                     const std::filesystem::path& checkpoint);

// Re-executes the run recorded in a manifest; `out_override` redirects the
// outputs (metrics reproduce bit-for-bit; the seconds column does not).
RunOutputs run_from_manifest(const std::filesystem::path& manifest_path,
                             const std::filesystem::path& out_override = {});

// axis = "snr_db": evaluates one trained model across `values`.
// axis = "feedback_bits": trains one model per bit budget and merges.
RunOutputs sweep(const ExperimentConfig& cfg, const std::string& axis,
                 const std::vector<double>& values);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t role);

}  // namespace mtwb
