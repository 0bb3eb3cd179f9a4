// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mtwb/channel.hpp"

namespace mtwb {

// Binary channel dataset.
//
// Layout (little-endian): magic "MTWC", version u32, config (nx u32, ny u32,
// subcarriers u32, clusters u32, paths u32, angle_spread_deg f64, max_delay
// f64, spacing f64), count u64, seed u64, then `count` records. Each record
// holds the K*Nt complex channel entries row-major as interleaved re/im f64
// followed by the metadata block (per cluster: azimuth, elevation, delay,
// then per path: offset_az, offset_el, gain re, gain im).
inline constexpr char kDatasetMagic[4] = {'M', 'T', 'W', 'C'};
inline constexpr std::uint32_t kDatasetVersion = 1;

class DatasetWriter {
 public:
  DatasetWriter(const std::filesystem::path& path, const ChannelConfig& cfg, std::uint64_t count,
                std::uint64_t seed);
  ~DatasetWriter();
  DatasetWriter(const DatasetWriter&) = delete;
  DatasetWriter& operator=(const DatasetWriter&) = delete;

  void append(const ChannelSample& sample);
  // Validates the promised count and flushes; called by the destructor too,
  // but errors only surface when called explicitly.
  void finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct Dataset {
  ChannelConfig config;
  std::uint64_t seed = 0;
  std::vector<ChannelSample> samples;

  static Dataset load(const std::filesystem::path& path);
  std::size_t size() const { return samples.size(); }
};

// Streams `count` samples to disk; sample i is drawn from the independent
// stream Rng::stream(seed, i), so any generation order yields the same file.
void gen_dataset(const ChannelConfig& cfg, std::uint64_t count, std::uint64_t seed,
                 const std::filesystem::path& path);

}  // namespace mtwb
