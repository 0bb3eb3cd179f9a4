// SPDX-License-Identifier: Apache-2.0
#include "mtwb/harness.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "mtwb/baselines.hpp"
#include "mtwb/checkpoint.hpp"
#include "mtwb/errors.hpp"
#include "mtwb/pipeline_ce.hpp"
#include "mtwb/pipeline_csi.hpp"
#include "mtwb/pipeline_hbf.hpp"

namespace mtwb {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kRunningMarker = "RUNNING";

// Holds the partial-run marker. The marker is removed only on explicit
// release, so any abnormal exit leaves it behind as evidence.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : marker_(dir / kRunningMarker) {
    fs::create_directories(dir);
    if (fs::exists(marker_)) {
      throw IoError("output directory " + dir.string() +
                    " is locked by a running or partially-completed run (" +
                    std::string(kRunningMarker) + " marker present)");
    }
    std::ofstream os(marker_);
    os << "pid-less marker; remove after inspecting the partial run\n";
  }
  void release() {
    if (!released_) {
      fs::remove(marker_);
      released_ = true;
    }
  }

 private:
  fs::path marker_;
  bool released_ = false;
};

template <typename Fn>
double median_seconds(Fn&& fn, int warmup = 5, int reps = 100) {
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::nth_element(times.begin(), times.begin() + reps / 2, times.end());
  return times[static_cast<std::size_t>(reps / 2)];
}

std::string channel_hash(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;  // hash only what determines the data
  json j;
  j["channel"] = c.to_json()["channel"];
  j["seed"] = c.seed;
  const std::string dump = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_train_log(const fs::path& path, const TrainResult& tr) {
  std::ofstream os(path, std::ios::trunc);
  os << "epoch,train_loss,val_metric\n";
  for (std::size_t i = 0; i < tr.epochs.size(); ++i) {
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", i, tr.epochs[i].train_loss,
                  tr.epochs[i].val_metric);
    os << buf;
  }
}

json environment_fingerprint() {
  json env;
#if defined(__clang__)
  env["compiler"] = "clang " + std::to_string(__clang_major__) + "." + std::to_string(__clang_minor__);
#elif defined(__GNUC__)
  env["compiler"] = "gcc " + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
#else
  env["compiler"] = "unknown";
#endif
  env["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                 "." + std::to_string(EIGEN_MINOR_VERSION);
#ifdef NDEBUG
  env["build"] = "release";
#else
  env["build"] = "debug";
#endif
  return env;
}

void write_manifest(const fs::path& path, const ExperimentConfig& cfg,
                    const DatasetPaths& data, const fs::path& checkpoint) {
  json m;
  m["config"] = cfg.to_json();
  m["content_hash"] = config_hash(cfg);
  m["environment"] = environment_fingerprint();
  m["results_csv"] = "results.csv";
  m["checkpoint"] = checkpoint.filename().string();
  m["datasets"] = {{"train", data.train.string()}, {"val", data.val.string()},
                   {"test", data.test.string()}};
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest: " + path.string());
  os << m.dump(2) << "\n";
}

std::string preset_letter(const ExperimentConfig& cfg) { return std::string(1, cfg.model.preset); }

CeConfig make_ce_config(const ExperimentConfig& cfg) {
  CeConfig c;
  c.channel = cfg.channel;
  c.measurements = cfg.ce_measurements();
  c.model_size = cfg.model.preset;
  c.model_overrides = cfg.model.overrides;
  c.train_snrs_db = cfg.ce.train_snrs_db;
  c.val_snr_db = cfg.ce.val_snr_db;
  return c;
}

CsiConfig make_csi_config(const ExperimentConfig& cfg) {
  CsiConfig c;
  c.channel = cfg.channel;
  c.codeword_len = cfg.csi.codeword_len;
  c.bits = cfg.csi.bits;
  c.model_size = cfg.model.preset;
  c.model_overrides = cfg.model.overrides;
  return c;
}

HbfConfig make_hbf_config(const ExperimentConfig& cfg) {
  HbfConfig c;
  c.channel = cfg.channel;
  c.users = cfg.hbf.users;
  c.mode = cfg.hbf.mode;
  c.codeword_len = cfg.hbf.codeword_len;
  c.bits = cfg.hbf.bits;
  c.model_size = cfg.model.preset;
  c.model_overrides = cfg.model.overrides;
  c.noise_power = cfg.hbf.noise_power;
  return c;
}

Dataset load_checked(const fs::path& path, const ChannelConfig& expected) {
  Dataset ds = Dataset::load(path);
  if (!(ds.config == expected)) {
    throw ConfigError("dataset " + path.string() + " was generated with a different channel config");
  }
  return ds;
}

int somp_sparsity_for(const ExperimentConfig& cfg) {
  const int t = cfg.ce.somp_sparsity > 0 ? cfg.ce.somp_sparsity : cfg.channel.clusters;
  return std::min(t, cfg.ce_measurements());
}

std::vector<ResultRecord> eval_ce_records(const ExperimentConfig& cfg, CeModel& model,
                                          const Dataset& test) {
  std::vector<ResultRecord> records;
  const std::string scheme = "ce-transformer-" + preset_letter(cfg);
  const double sample_seconds = median_seconds([&] {
    Rng rng = Rng::stream(derive_seed(cfg.seed, 90), 0);
    const Measurement m = model.pilot_project(test.samples.front().h, 10.0, rng);
    (void)model.estimate(m);
  });
  for (std::size_t si = 0; si < cfg.ce.snrs_db.size(); ++si) {
    const double snr = cfg.ce.snrs_db[si];
    const std::uint64_t noise_seed = derive_seed(cfg.seed, 100 + si);
    ResultRecord r;
    r.scheme = scheme;
    r.coordinate = snr;
    r.metric = "nmse_db";
    r.value = eval_ce_nmse(model, test, snr, noise_seed);
    r.preset = preset_letter(cfg);
    r.seed = cfg.seed;
    r.seconds = sample_seconds;
    r.params = model.params().total_params();
    r.flops = model.forward_flops();
    records.push_back(r);
  }
  if (cfg.baselines) {
    const AngularDictionary dict = AngularDictionary::build(cfg.channel);
    const Eigen::MatrixXcd pilot = model.pilot_matrix();
    const Eigen::MatrixXcd pilot_t = pilot.transpose();
    const int sparsity = somp_sparsity_for(cfg);
    const auto k = static_cast<std::uint64_t>(cfg.channel.subcarriers);
    const auto m = static_cast<std::uint64_t>(cfg.ce_measurements());
    const auto g = static_cast<std::uint64_t>(dict.size());
    const auto nt = static_cast<std::uint64_t>(cfg.channel.antennas());
    const double somp_seconds = median_seconds([&] {
      Rng rng = Rng::stream(derive_seed(cfg.seed, 91), 0);
      (void)somp_estimate(awgn(test.samples.front().h * pilot_t, 10.0, rng), pilot, dict, sparsity);
    }, 2, 20);
    const double ls_seconds = median_seconds([&] {
      Rng rng = Rng::stream(derive_seed(cfg.seed, 92), 0);
      (void)ls_estimate(awgn(test.samples.front().h * pilot_t, 10.0, rng), pilot, cfg.ce.ls_ridge);
    }, 2, 20);
    for (std::size_t si = 0; si < cfg.ce.snrs_db.size(); ++si) {
      const double snr = cfg.ce.snrs_db[si];
      const std::uint64_t noise_seed = derive_seed(cfg.seed, 100 + si);
      std::vector<Eigen::MatrixXcd> somp_est, ls_est, truths;
      for (std::size_t i = 0; i < test.size(); ++i) {
        Rng rng = Rng::stream(noise_seed, i);
        const Eigen::MatrixXcd y = awgn(test.samples[i].h * pilot_t, snr, rng);
        somp_est.push_back(somp_estimate(y, pilot, dict, sparsity));
        ls_est.push_back(ls_estimate(y, pilot, cfg.ce.ls_ridge));
        truths.push_back(test.samples[i].h);
      }
      ResultRecord somp_r{"ce-somp", snr, "nmse_db", nmse_db(somp_est, truths), "-", cfg.seed,
                          somp_seconds, 0,
                          static_cast<std::uint64_t>(sparsity) * 4 * m * g * k};
      ResultRecord ls_r{"ce-ls", snr, "nmse_db", nmse_db(ls_est, truths), "-", cfg.seed,
                        ls_seconds, 0, 4 * nt * nt * m + nt * nt * nt + 4 * nt * m * k};
      records.push_back(somp_r);
      records.push_back(ls_r);
    }
  }
  return records;
}

std::vector<ResultRecord> run_ce(const ExperimentConfig& cfg, const DatasetPaths& paths,
                                 const fs::path& out_dir, fs::path& checkpoint_out) {
  const Dataset train = load_checked(paths.train, cfg.channel);
  const Dataset val = load_checked(paths.val, cfg.channel);
  const Dataset test = load_checked(paths.test, cfg.channel);
  CeModel model(make_ce_config(cfg), cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const TrainResult tr = train_ce(model, train, val, tc);
  write_train_log(out_dir / "train_log.csv", tr);
  checkpoint_out = out_dir / "model.mtwb";
  save_params(checkpoint_out, model.params());
  return eval_ce_records(cfg, model, test);
}

std::vector<ResultRecord> run_csi(const ExperimentConfig& cfg, const DatasetPaths& paths,
                                  const fs::path& out_dir, fs::path& checkpoint_out) {
  const Dataset train = load_checked(paths.train, cfg.channel);
  const Dataset val = load_checked(paths.val, cfg.channel);
  const Dataset test = load_checked(paths.test, cfg.channel);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;

  CsiTransformerModel model(make_csi_config(cfg), cfg.seed);
  const TrainResult tr = train_csi(model, train, val, tc);
  write_train_log(out_dir / "train_log.csv", tr);
  checkpoint_out = out_dir / "model.mtwb";
  save_params(checkpoint_out, model.params());

  std::vector<ResultRecord> records;
  auto record_for = [&](const FeedbackModel& fm, const std::string& scheme,
                        const std::string& preset) {
    ResultRecord r;
    r.scheme = scheme;
    r.coordinate = fm.cfg().feedback_bits();
    r.metric = "nmse_db";
    r.value = eval_csi_nmse(fm, test);
    r.preset = preset;
    r.seed = cfg.seed;
    r.seconds = median_seconds([&] { (void)fm.roundtrip(test.samples.front().h); });
    r.params = fm.params().total_params();
    r.flops = fm.forward_flops();
    return r;
  };
  records.push_back(record_for(model, "csi-transformer-" + preset_letter(cfg), preset_letter(cfg)));
  if (cfg.baselines) {
    auto widths = cfg.csi.mlp_widths;
    widths[2] = cfg.csi.codeword_len;
    MlpFeedbackModel mlp(make_csi_config(cfg), widths, cfg.seed);
    (void)train_csi(mlp, train, val, tc);
    save_params(out_dir / "mlp.mtwb", mlp.params());
    records.push_back(record_for(mlp, "csi-mlp", "-"));
  }
  return records;
}

std::vector<ResultRecord> run_hbf(const ExperimentConfig& cfg, const DatasetPaths& paths,
                                  const fs::path& out_dir, fs::path& checkpoint_out) {
  const Dataset train_ds = load_checked(paths.train, cfg.channel);
  const Dataset val_ds = load_checked(paths.val, cfg.channel);
  const Dataset test_ds = load_checked(paths.test, cfg.channel);
  const auto train = make_multiuser(train_ds, cfg.hbf.users);
  const auto val = make_multiuser(val_ds, cfg.hbf.users);
  const auto test = make_multiuser(test_ds, cfg.hbf.users);

  HbfModel model(make_hbf_config(cfg), cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const TrainResult tr = train_hbf(model, train, val, tc);
  write_train_log(out_dir / "train_log.csv", tr);
  checkpoint_out = out_dir / "model.mtwb";
  save_params(checkpoint_out, model.params());

  std::vector<ResultRecord> records;
  ResultRecord r;
  r.scheme = "hbf-transformer-" + preset_letter(cfg) + "-mode" + std::to_string(cfg.hbf.mode);
  r.coordinate = cfg.hbf.mode == 2 ? make_hbf_config(cfg).total_feedback_bits() : 0.0;
  r.metric = "sum_rate";
  r.value = eval_hbf_rate(model, test);
  r.preset = preset_letter(cfg);
  r.seed = cfg.seed;
  r.seconds = median_seconds([&] { (void)model.beamform(test.front()); }, 3, 30);
  r.params = model.params().total_params();
  r.flops = model.forward_flops();
  records.push_back(r);

  if (cfg.baselines) {
    const AngularDictionary dict = AngularDictionary::build(cfg.channel);
    const auto nu = static_cast<std::uint64_t>(cfg.hbf.users);
    const auto k = static_cast<std::uint64_t>(cfg.channel.subcarriers);
    const auto nt = static_cast<std::uint64_t>(cfg.channel.antennas());
    const auto g = static_cast<std::uint64_t>(dict.size());
    double zf_sum = 0.0, sshp_sum = 0.0;
    for (const auto& ch : test) {
      const auto f_opt = fully_digital_precoder(ch);
      zf_sum += sum_rate(ch, Eigen::MatrixXcd::Identity(cfg.channel.antennas(),
                                                        cfg.channel.antennas()),
                         f_opt, cfg.hbf.noise_power);
      const HybridFactors hf = ss_hp(f_opt, dict, cfg.hbf.users);
      sshp_sum += ss_hp_rate(ch, hf, cfg.hbf.noise_power);
    }
    const double zf_seconds = median_seconds([&] { (void)fully_digital_precoder(test.front()); }, 3, 30);
    const double sshp_seconds = median_seconds(
        [&] { (void)ss_hp(fully_digital_precoder(test.front()), dict, cfg.hbf.users); }, 3, 30);
    records.push_back(ResultRecord{"hbf-zf", 0.0, "sum_rate",
                                   zf_sum / static_cast<double>(test.size()), "-", cfg.seed,
                                   zf_seconds, 0, k * (4 * nu * nu * nt + nu * nu * nu)});
    records.push_back(ResultRecord{"hbf-sshp", 0.0, "sum_rate",
                                   sshp_sum / static_cast<double>(test.size()), "-", cfg.seed,
                                   sshp_seconds, 0, nu * 4 * g * nt * nu * k});
  }
  return records;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t role) {
  Rng rng = Rng::stream(seed, 0xD5EEDULL + role);
  return rng.next_u64();
}

DatasetPaths ensure_datasets(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.data.dir);
  const std::string hash = channel_hash(cfg);
  DatasetPaths paths;
  struct Role {
    const char* name;
    int count;
    std::uint64_t role_id;
    fs::path* slot;
  };
  Role roles[] = {{"train", cfg.data.train, 0, &paths.train},
                  {"val", cfg.data.val, 1, &paths.val},
                  {"test", cfg.data.test, 2, &paths.test}};
  for (const auto& r : roles) {
    fs::path p = cfg.data.dir / (hash + "-" + r.name + "-" + std::to_string(r.count) + ".mtwc");
    if (!fs::exists(p)) {
      gen_dataset(cfg.channel, static_cast<std::uint64_t>(r.count), derive_seed(cfg.seed, r.role_id), p);
    }
    *r.slot = p;
  }
  return paths;
}

RunOutputs run(const ExperimentConfig& cfg) {
  cfg.validate();
  RunLock lock(cfg.out);
  RunOutputs out;
  out.out_dir = cfg.out;
  const DatasetPaths paths = ensure_datasets(cfg);
  fs::path checkpoint;
  if (cfg.pipeline == "ce") {
    out.records = run_ce(cfg, paths, cfg.out, checkpoint);
  } else if (cfg.pipeline == "csi") {
    out.records = run_csi(cfg, paths, cfg.out, checkpoint);
  } else {
    out.records = run_hbf(cfg, paths, cfg.out, checkpoint);
  }
  out.checkpoint = checkpoint;
  out.results_csv = cfg.out / "results.csv";
  write_results_csv(out.results_csv, out.records);
  out.manifest = cfg.out / "manifest.json";
  write_manifest(out.manifest, cfg, paths, checkpoint);
  lock.release();
  return out;
}

std::filesystem::path train_stage(const ExperimentConfig& cfg) {
  cfg.validate();
  RunLock lock(cfg.out);
  const DatasetPaths paths = ensure_datasets(cfg);
  const Dataset train = load_checked(paths.train, cfg.channel);
  const Dataset val = load_checked(paths.val, cfg.channel);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const fs::path checkpoint = cfg.out / "model.mtwb";
  if (cfg.pipeline == "ce") {
    CeModel model(make_ce_config(cfg), cfg.seed);
    write_train_log(cfg.out / "train_log.csv", train_ce(model, train, val, tc));
    save_params(checkpoint, model.params());
  } else if (cfg.pipeline == "csi") {
    CsiTransformerModel model(make_csi_config(cfg), cfg.seed);
    write_train_log(cfg.out / "train_log.csv", train_csi(model, train, val, tc));
    save_params(checkpoint, model.params());
  } else {
    HbfModel model(make_hbf_config(cfg), cfg.seed);
    write_train_log(cfg.out / "train_log.csv",
                    train_hbf(model, make_multiuser(train, cfg.hbf.users),
                              make_multiuser(val, cfg.hbf.users), tc));
    save_params(checkpoint, model.params());
  }
  write_manifest(cfg.out / "manifest.json", cfg, paths, checkpoint);
  lock.release();
  return checkpoint;
}

std::vector<ResultRecord> eval_stage(const ExperimentConfig& cfg,
                                     const std::filesystem::path& checkpoint) {
  cfg.validate();
  const DatasetPaths paths = ensure_datasets(cfg);
  const Dataset test = load_checked(paths.test, cfg.channel);
  if (cfg.pipeline == "ce") {
    CeModel model(make_ce_config(cfg), cfg.seed);
    load_params(checkpoint, model.params());
    return eval_ce_records(cfg, model, test);
  }
  if (cfg.pipeline == "csi") {
    CsiTransformerModel model(make_csi_config(cfg), cfg.seed);
    load_params(checkpoint, model.params());
    ResultRecord r;
    r.scheme = "csi-transformer-" + preset_letter(cfg);
    r.coordinate = model.cfg().feedback_bits();
    r.metric = "nmse_db";
    r.value = eval_csi_nmse(model, test);
    r.preset = preset_letter(cfg);
    r.seed = cfg.seed;
    r.seconds = median_seconds([&] { (void)model.roundtrip(test.samples.front().h); });
    r.params = model.params().total_params();
    r.flops = model.forward_flops();
    return {r};
  }
  HbfModel model(make_hbf_config(cfg), cfg.seed);
  load_params(checkpoint, model.params());
  const auto test_mu = make_multiuser(test, cfg.hbf.users);
  ResultRecord r;
  r.scheme = "hbf-transformer-" + preset_letter(cfg) + "-mode" + std::to_string(cfg.hbf.mode);
  r.coordinate = cfg.hbf.mode == 2 ? make_hbf_config(cfg).total_feedback_bits() : 0.0;
  r.metric = "sum_rate";
  r.value = eval_hbf_rate(model, test_mu);
  r.preset = preset_letter(cfg);
  r.seed = cfg.seed;
  r.seconds = median_seconds([&] { (void)model.beamform(test_mu.front()); }, 3, 30);
  r.params = model.params().total_params();
  r.flops = model.forward_flops();
  return {r};
}

RunOutputs run_from_manifest(const std::filesystem::path& manifest_path,
                             const std::filesystem::path& out_override) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open manifest: " + manifest_path.string());
  json m;
  is >> m;
  ExperimentConfig cfg = ExperimentConfig::from_json(m.at("config"));
  if (!out_override.empty()) cfg.out = out_override;
  return run(cfg);
}

RunOutputs sweep(const ExperimentConfig& cfg, const std::string& axis,
                 const std::vector<double>& values) {
  cfg.validate();
  if (values.empty()) throw ConfigError("sweep: values must be non-empty");
  if (axis == "snr_db") {
    if (cfg.pipeline != "ce") throw ConfigError("sweep snr_db: only the ce pipeline sweeps SNR");
    ExperimentConfig c = cfg;
    c.ce.snrs_db = values;
    return run(c);
  }
  if (axis != "feedback_bits") throw ConfigError("sweep.axis: must be snr_db or feedback_bits");
  if (cfg.pipeline == "ce") throw ConfigError("sweep feedback_bits: not applicable to ce");

  RunLock lock(cfg.out);
  RunOutputs merged;
  merged.out_dir = cfg.out;
  std::vector<ResultRecord> records;
  for (double v : values) {
    const int bits_total = static_cast<int>(v);
    ExperimentConfig c = cfg;
    c.out = cfg.out / ("bits-" + std::to_string(bits_total));
    if (cfg.pipeline == "csi") {
      if (bits_total % cfg.csi.bits != 0 || bits_total < cfg.csi.bits) {
        throw ConfigError("sweep feedback_bits: budget " + std::to_string(bits_total) +
                          " is not a multiple of csi.bits");
      }
      c.csi.codeword_len = bits_total / cfg.csi.bits;
      c.csi.mlp_widths[2] = c.csi.codeword_len;
    } else {
      const int per_ue = cfg.hbf.users * cfg.hbf.bits;
      if (bits_total % per_ue != 0 || bits_total < per_ue) {
        throw ConfigError("sweep feedback_bits: budget " + std::to_string(bits_total) +
                          " is not a multiple of users*bits");
      }
      c.hbf.mode = 2;
      c.hbf.codeword_len = bits_total / per_ue;
    }
    const RunOutputs sub = run(c);
    records.insert(records.end(), sub.records.begin(), sub.records.end());
  }
  // Constant reference schemes repeat identically across sub-runs.
  std::vector<ResultRecord> deduped;
  for (const auto& r : records) {
    const bool dup = std::any_of(deduped.begin(), deduped.end(), [&](const ResultRecord& d) {
      return d.scheme == r.scheme && d.coordinate == r.coordinate && d.metric == r.metric;
    });
    if (!dup) deduped.push_back(r);
  }
  merged.records = std::move(deduped);
  merged.results_csv = cfg.out / "results.csv";
  write_results_csv(merged.results_csv, merged.records);
  lock.release();
  return merged;
}

}  // namespace mtwb
