// SPDX-License-Identifier: Apache-2.0
#include "mtwb/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "mtwb/errors.hpp"

namespace mtwb {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double get_f64(std::istream& is) {
  const std::uint64_t bits = get_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, Tensor>>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, 4);
  put_u32(os, kCheckpointVersion);
  for (const auto& [name, t] : params) {
    put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(os, static_cast<std::uint64_t>(t.rank()));
    for (Index e : t.shape()) put_u64(os, static_cast<std::uint64_t>(e));
    for (Index i = 0; i < t.numel(); ++i) put_f64(os, t.array()[i]);
  }
  if (!os) throw IoError("checkpoint write failed: " + path.string());
}

std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError("bad checkpoint magic in " + path.string());
  }
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<std::pair<std::string, Tensor>> out;
  while (true) {
    const std::uint64_t name_len = get_u64(is);
    if (is.eof()) break;
    if (!is) throw IoError("truncated checkpoint: " + path.string());
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rank = get_u64(is);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<Index>(get_u64(is));
    const Index n = numel_of(shape);
    Array data(n);
    for (Index i = 0; i < n; ++i) data[i] = get_f64(is);
    if (!is) throw IoError("truncated checkpoint: " + path.string());
    out.emplace_back(std::move(name), Tensor::from_array(std::move(shape), std::move(data)));
    is.peek();  // trip eof before the next header read
    if (is.eof()) break;
  }
  return out;
}

void save_params(const std::filesystem::path& path, const ParamStore& store) {
  std::vector<std::pair<std::string, Tensor>> params;
  params.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    params.emplace_back(store.name(static_cast<int>(i)), store.value(static_cast<int>(i)));
  }
  write_checkpoint(path, params);
}

void load_params(const std::filesystem::path& path, ParamStore& store) {
  for (auto& [name, tensor] : read_checkpoint(path)) {
    if (!store.has(name)) throw IoError("checkpoint parameter not in model: " + name);
    // set_value validates the shape.
    const Tensor& current = store.value(name);
    (void)current;
    for (std::size_t i = 0; i < store.size(); ++i) {
      if (store.name(static_cast<int>(i)) == name) {
        store.set_value(static_cast<int>(i), std::move(tensor));
        break;
      }
    }
  }
}

}  // namespace mtwb
