// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mtwb/param_store.hpp"
#include "mtwb/tensor.hpp"

namespace mtwb {

// Flat binary parameter container.
//
// Layout (all integers little-endian):
//   magic "MTWB", version u32
//   records: name_len u64, name bytes (UTF-8), rank u64, extents u64[rank],
//            values f64[numel]
// Records run to end of file.
inline constexpr char kCheckpointMagic[4] = {'M', 'T', 'W', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, Tensor>>& params);
std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::filesystem::path& path);

void save_params(const std::filesystem::path& path, const ParamStore& store);
// Loads by name; every stored parameter must exist with a matching shape.
void load_params(const std::filesystem::path& path, ParamStore& store);

}  // namespace mtwb
