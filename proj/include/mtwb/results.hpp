// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mtwb {

// One measured point. `coordinate` is the sweep axis value (snr_db or total
// feedback bits; 0 marks perfect-CSI reference schemes). `seconds` is the
// median per-sample forward time. Values print with max_digits10 so rereads
// are bit-exact.
struct ResultRecord {
  std::string scheme;
  double coordinate = 0.0;
  std::string metric;  // nmse_db | sum_rate
  double value = 0.0;
  std::string preset;  // model size or "-" for baselines
  std::uint64_t seed = 0;
  double seconds = 0.0;
  std::int64_t params = 0;
  std::uint64_t flops = 0;
};

inline constexpr const char* kResultsHeader =
    "scheme,coordinate,metric,value,preset,seed,seconds,params,flops";

// Writes sorted by (scheme, coordinate).
void write_results_csv(const std::filesystem::path& path, std::vector<ResultRecord> records);
std::vector<ResultRecord> read_results_csv(const std::filesystem::path& path);

struct Crossover {
  std::string scheme_a, scheme_b;
  double coordinate;  // first coordinate at which the order differs from the previous one
};

struct CompareReport {
  std::string metric;
  std::vector<double> coordinates;
  // ranking[i] = schemes best-to-worst at coordinates[i]
  std::vector<std::vector<std::string>> ranking;
  std::vector<Crossover> crossovers;
  std::string table;  // printable
};

// Merges result files (one shared metric required; mixed metrics raise
// ConfigError), ranks schemes per coordinate, and reports coordinates where
// any pairwise order flips. Schemes present only at coordinate 0 are treated
// as constant reference lines across the sweep.
CompareReport compare_results(const std::vector<std::filesystem::path>& files);

}  // namespace mtwb
