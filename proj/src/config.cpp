// SPDX-License-Identifier: Apache-2.0
#include "mtwb/config.hpp"

#include <cmath>
#include <fstream>

#include "mtwb/errors.hpp"

namespace mtwb {

using nlohmann::json;

int ExperimentConfig::ce_measurements() const {
  return static_cast<int>(std::lround(ce.ratio * channel.antennas()));
}

void ExperimentConfig::validate() const {
  if (preset != "desk" && preset != "paper-full") {
    throw ConfigError("preset: must be 'desk' or 'paper-full'");
  }
  if (pipeline != "ce" && pipeline != "csi" && pipeline != "hbf") {
    throw ConfigError("pipeline: must be one of ce, csi, hbf");
  }
  channel.validate();
  if (model.preset != 'S' && model.preset != 'M' && model.preset != 'L') {
    throw ConfigError("model.preset: must be S, M, or L");
  }
  if (train.lr <= 0.0) throw ConfigError("train.lr: must be > 0");
  if (train.batch < 1) throw ConfigError("train.batch: must be >= 1");
  if (train.epochs < 1) throw ConfigError("train.epochs: must be >= 1");
  if (train.patience < 1) throw ConfigError("train.patience: must be >= 1");
  if (data.train < 1 || data.val < 1 || data.test < 1) {
    throw ConfigError("data.train/val/test: must be >= 1");
  }
  if (pipeline == "ce") {
    if (!(ce.ratio > 0.0 && ce.ratio <= 1.0)) throw ConfigError("ce.ratio: must be in (0, 1]");
    if (ce.snrs_db.empty()) throw ConfigError("ce.snrs_db: must be non-empty");
    if (ce.train_snrs_db.empty()) throw ConfigError("ce.train_snrs_db: must be non-empty");
    if (ce_measurements() < 1) throw ConfigError("ce.ratio: rounds to zero measurements");
    if (ce.ls_ridge < 0.0) throw ConfigError("ce.ls_ridge: must be >= 0");
  }
  if (pipeline == "csi") {
    if (csi.codeword_len < 1) throw ConfigError("csi.codeword_len: must be >= 1");
    if (csi.bits < 1 || csi.bits > 40) throw ConfigError("csi.bits: must be in [1, 40]");
    if (csi.mlp_widths[2] != csi.codeword_len) {
      throw ConfigError("csi.mlp_widths: last width must equal csi.codeword_len");
    }
  }
  if (pipeline == "hbf") {
    if (hbf.users < 1) throw ConfigError("hbf.users: must be >= 1");
    if (hbf.mode != 1 && hbf.mode != 2) throw ConfigError("hbf.mode: must be 1 or 2");
    if (hbf.codeword_len < 1) throw ConfigError("hbf.codeword_len: must be >= 1");
    if (hbf.bits < 1 || hbf.bits > 40) throw ConfigError("hbf.bits: must be in [1, 40]");
    if (hbf.noise_power <= 0.0) throw ConfigError("hbf.noise_power: must be > 0");
  }
}

namespace {

json channel_to_json(const ChannelConfig& c) {
  return json{{"nx", c.nx},
              {"ny", c.ny},
              {"subcarriers", c.subcarriers},
              {"clusters", c.clusters},
              {"paths_per_cluster", c.paths_per_cluster},
              {"angle_spread_deg", c.angle_spread_deg},
              {"max_delay", c.max_delay},
              {"spacing", c.spacing}};
}

void channel_from_json(const json& j, ChannelConfig& c) {
  c.nx = j.value("nx", c.nx);
  c.ny = j.value("ny", c.ny);
  c.subcarriers = j.value("subcarriers", c.subcarriers);
  c.clusters = j.value("clusters", c.clusters);
  c.paths_per_cluster = j.value("paths_per_cluster", c.paths_per_cluster);
  c.angle_spread_deg = j.value("angle_spread_deg", c.angle_spread_deg);
  c.max_delay = j.value("max_delay", c.max_delay);
  c.spacing = j.value("spacing", c.spacing);
}

}  // namespace

json ExperimentConfig::to_json() const {
  json j;
  j["preset"] = preset;
  j["pipeline"] = pipeline;
  j["channel"] = channel_to_json(channel);
  j["model"] = {{"preset", std::string(1, model.preset)}};
  if (model.overrides.any()) {
    json ov;
    if (model.overrides.layers >= 0) ov["layers"] = model.overrides.layers;
    if (model.overrides.d_model >= 0) ov["d_model"] = model.overrides.d_model;
    if (model.overrides.heads >= 0) ov["heads"] = model.overrides.heads;
    if (model.overrides.d_ff >= 0) ov["d_ff"] = model.overrides.d_ff;
    j["model"]["overrides"] = ov;
  }
  j["train"] = {{"lr", train.lr},
                {"batch", train.batch},
                {"epochs", train.epochs},
                {"patience", train.patience}};
  j["data"] = {{"dir", data.dir.string()}, {"train", data.train}, {"val", data.val}, {"test", data.test}};
  j["seed"] = seed;
  j["out"] = out.string();
  j["baselines"] = baselines;
  j["ce"] = {{"ratio", ce.ratio},        {"snrs_db", ce.snrs_db}, {"train_snrs_db", ce.train_snrs_db},
             {"val_snr_db", ce.val_snr_db}, {"somp_sparsity", ce.somp_sparsity}, {"ls_ridge", ce.ls_ridge}};
  j["csi"] = {{"codeword_len", csi.codeword_len},
              {"bits", csi.bits},
              {"mlp_widths", csi.mlp_widths}};
  j["hbf"] = {{"users", hbf.users},
              {"mode", hbf.mode},
              {"codeword_len", hbf.codeword_len},
              {"bits", hbf.bits},
              {"noise_power", hbf.noise_power}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig cfg = preset_config(j.value("preset", std::string("desk")),
                                       j.value("pipeline", std::string("ce")));
  if (j.contains("channel")) channel_from_json(j.at("channel"), cfg.channel);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    const std::string p = m.value("preset", std::string(1, cfg.model.preset));
    if (p.size() != 1) throw ConfigError("model.preset: must be a single letter");
    cfg.model.preset = p[0];
    if (m.contains("overrides")) {
      const auto& ov = m.at("overrides");
      cfg.model.overrides.layers = ov.value("layers", -1);
      cfg.model.overrides.d_model = ov.value("d_model", -1);
      cfg.model.overrides.heads = ov.value("heads", -1);
      cfg.model.overrides.d_ff = ov.value("d_ff", -1);
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.batch = t.value("batch", cfg.train.batch);
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.patience = t.value("patience", cfg.train.patience);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    cfg.data.dir = d.value("dir", cfg.data.dir.string());
    cfg.data.train = d.value("train", cfg.data.train);
    cfg.data.val = d.value("val", cfg.data.val);
    cfg.data.test = d.value("test", cfg.data.test);
  }
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out = j.value("out", cfg.out.string());
  cfg.baselines = j.value("baselines", cfg.baselines);
  if (j.contains("ce")) {
    const auto& c = j.at("ce");
    cfg.ce.ratio = c.value("ratio", cfg.ce.ratio);
    if (c.contains("snrs_db")) cfg.ce.snrs_db = c.at("snrs_db").get<std::vector<double>>();
    if (c.contains("train_snrs_db")) {
      cfg.ce.train_snrs_db = c.at("train_snrs_db").get<std::vector<double>>();
    }
    cfg.ce.val_snr_db = c.value("val_snr_db", cfg.ce.val_snr_db);
    cfg.ce.somp_sparsity = c.value("somp_sparsity", cfg.ce.somp_sparsity);
    cfg.ce.ls_ridge = c.value("ls_ridge", cfg.ce.ls_ridge);
  }
  if (j.contains("csi")) {
    const auto& c = j.at("csi");
    cfg.csi.codeword_len = c.value("codeword_len", cfg.csi.codeword_len);
    cfg.csi.bits = c.value("bits", cfg.csi.bits);
    if (c.contains("mlp_widths")) cfg.csi.mlp_widths = c.at("mlp_widths").get<std::array<int, 3>>();
    // Keep the forced tie unless widths were given explicitly.
    if (!c.contains("mlp_widths")) cfg.csi.mlp_widths[2] = cfg.csi.codeword_len;
  }
  if (j.contains("hbf")) {
    const auto& h = j.at("hbf");
    cfg.hbf.users = h.value("users", cfg.hbf.users);
    cfg.hbf.mode = h.value("mode", cfg.hbf.mode);
    cfg.hbf.codeword_len = h.value("codeword_len", cfg.hbf.codeword_len);
    cfg.hbf.bits = h.value("bits", cfg.hbf.bits);
    cfg.hbf.noise_power = h.value("noise_power", cfg.hbf.noise_power);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

ExperimentConfig ExperimentConfig::preset_config(const std::string& preset,
                                                 const std::string& pipeline) {
  ExperimentConfig cfg;
  cfg.preset = preset;
  cfg.pipeline = pipeline;
  if (preset == "desk") {
    cfg.channel = ChannelConfig::desk();
    cfg.data.train = 5000;
    cfg.data.val = 500;
    cfg.data.test = 500;
    cfg.train.epochs = 50;
  } else if (preset == "paper-full") {
    cfg.channel = ChannelConfig::paper_full();
    cfg.data.train = 100000;
    cfg.data.val = 10000;
    cfg.data.test = 5000;
    cfg.train.epochs = 50;
  } else {
    throw ConfigError("preset: must be 'desk' or 'paper-full'");
  }
  cfg.csi.mlp_widths = {2 * cfg.channel.antennas() * cfg.channel.subcarriers / 2,
                        cfg.channel.antennas() * cfg.channel.subcarriers / 2, cfg.csi.codeword_len};
  return cfg;
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string dump = cfg.to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mtwb
