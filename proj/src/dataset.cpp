// SPDX-License-Identifier: Apache-2.0
#include "mtwb/dataset.hpp"

#include <cstring>
#include <fstream>

#include "mtwb/errors.hpp"

namespace mtwb {

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_integral_v<T>);
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_le<std::uint64_t>(os, bits);
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  is.read(reinterpret_cast<char*>(b), sizeof(T));
  T v = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) v = static_cast<T>((v << 8) | b[i]);
  return v;
}

double get_f64(std::istream& is) {
  const std::uint64_t bits = get_le<std::uint64_t>(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void write_header(std::ostream& os, const ChannelConfig& cfg, std::uint64_t count, std::uint64_t seed) {
  os.write(kDatasetMagic, 4);
  put_le<std::uint32_t>(os, kDatasetVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.nx));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.ny));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.subcarriers));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.clusters));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.paths_per_cluster));
  put_f64(os, cfg.angle_spread_deg);
  put_f64(os, cfg.max_delay);
  put_f64(os, cfg.spacing);
  put_le<std::uint64_t>(os, count);
  put_le<std::uint64_t>(os, seed);
}

}  // namespace

struct DatasetWriter::Impl {
  std::ofstream os;
  std::filesystem::path path;
  ChannelConfig cfg;
  std::uint64_t promised = 0;
  std::uint64_t written = 0;
  bool finished = false;
};

DatasetWriter::DatasetWriter(const std::filesystem::path& path, const ChannelConfig& cfg,
                             std::uint64_t count, std::uint64_t seed)
    : impl_(new Impl) {
  cfg.validate();
  impl_->path = path;
  impl_->cfg = cfg;
  impl_->promised = count;
  impl_->os.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->os) throw IoError("cannot open dataset for writing: " + path.string());
  write_header(impl_->os, cfg, count, seed);
}

DatasetWriter::~DatasetWriter() {
  if (impl_ && !impl_->finished) {
    try {
      finish();
    } catch (...) {
    }
  }
}

void DatasetWriter::append(const ChannelSample& sample) {
  auto& im = *impl_;
  if (im.finished) throw IoError("dataset writer already finished");
  if (sample.h.rows() != im.cfg.subcarriers || sample.h.cols() != im.cfg.antennas()) {
    throw DimensionError("dataset append: channel matrix does not match config");
  }
  if (static_cast<int>(sample.clusters.size()) != im.cfg.clusters) {
    throw DimensionError("dataset append: metadata does not match config");
  }
  for (Eigen::Index r = 0; r < sample.h.rows(); ++r) {
    for (Eigen::Index c = 0; c < sample.h.cols(); ++c) {
      put_f64(im.os, sample.h(r, c).real());
      put_f64(im.os, sample.h(r, c).imag());
    }
  }
  for (const auto& cl : sample.clusters) {
    put_f64(im.os, cl.azimuth);
    put_f64(im.os, cl.elevation);
    put_f64(im.os, cl.delay);
    for (std::size_t p = 0; p < cl.gains.size(); ++p) {
      put_f64(im.os, cl.path_offset_az[p]);
      put_f64(im.os, cl.path_offset_el[p]);
      put_f64(im.os, cl.gains[p].real());
      put_f64(im.os, cl.gains[p].imag());
    }
  }
  ++im.written;
}

void DatasetWriter::finish() {
  auto& im = *impl_;
  if (im.finished) return;
  im.finished = true;
  im.os.flush();
  if (!im.os) throw IoError("dataset write failed: " + im.path.string());
  if (im.written != im.promised) {
    throw IoError("dataset " + im.path.string() + ": wrote " + std::to_string(im.written) +
                  " of " + std::to_string(im.promised) + " promised samples");
  }
}

Dataset Dataset::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw IoError("bad dataset magic in " + path.string());
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != kDatasetVersion) throw IoError("unsupported dataset version");
  Dataset ds;
  ds.config.nx = static_cast<int>(get_le<std::uint32_t>(is));
  ds.config.ny = static_cast<int>(get_le<std::uint32_t>(is));
  ds.config.subcarriers = static_cast<int>(get_le<std::uint32_t>(is));
  ds.config.clusters = static_cast<int>(get_le<std::uint32_t>(is));
  ds.config.paths_per_cluster = static_cast<int>(get_le<std::uint32_t>(is));
  ds.config.angle_spread_deg = get_f64(is);
  ds.config.max_delay = get_f64(is);
  ds.config.spacing = get_f64(is);
  const auto count = get_le<std::uint64_t>(is);
  ds.seed = get_le<std::uint64_t>(is);
  ds.config.validate();

  const int k = ds.config.subcarriers;
  const int nt = ds.config.antennas();
  ds.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    ChannelSample s;
    s.h.resize(k, nt);
    for (int r = 0; r < k; ++r) {
      for (int c = 0; c < nt; ++c) {
        const double re = get_f64(is);
        const double im = get_f64(is);
        s.h(r, c) = {re, im};
      }
    }
    s.clusters.resize(static_cast<std::size_t>(ds.config.clusters));
    for (auto& cl : s.clusters) {
      cl.azimuth = get_f64(is);
      cl.elevation = get_f64(is);
      cl.delay = get_f64(is);
      const auto np = static_cast<std::size_t>(ds.config.paths_per_cluster);
      cl.path_offset_az.resize(np);
      cl.path_offset_el.resize(np);
      cl.gains.resize(np);
      for (std::size_t p = 0; p < np; ++p) {
        cl.path_offset_az[p] = get_f64(is);
        cl.path_offset_el[p] = get_f64(is);
        const double re = get_f64(is);
        const double im = get_f64(is);
        cl.gains[p] = {re, im};
      }
    }
    if (!is) {
      throw IoError("dataset " + path.string() + ": header promises " + std::to_string(count) +
                    " samples but the file truncates at " + std::to_string(i));
    }
    ds.samples.push_back(std::move(s));
  }
  is.peek();
  if (!is.eof()) throw IoError("dataset " + path.string() + ": trailing bytes after promised samples");
  return ds;
}

void gen_dataset(const ChannelConfig& cfg, std::uint64_t count, std::uint64_t seed,
                 const std::filesystem::path& path) {
  DatasetWriter w(path, cfg, count, seed);
  for (std::uint64_t i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, i);
    w.append(gen_channel(cfg, rng));
  }
  w.finish();
}

}  // namespace mtwb
