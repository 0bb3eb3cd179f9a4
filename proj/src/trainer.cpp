// SPDX-License-Identifier: Apache-2.0
#include "mtwb/trainer.hpp"

#include <cmath>
#include <numeric>

#include "mtwb/errors.hpp"

namespace mtwb {

TrainResult run_training(ParamStore& store, const TrainConfig& cfg, int num_samples,
                         const BatchLossFn& batch_loss, const ValidateFn& validate,
                         const std::function<void()>& after_step, bool lower_is_better) {
  if (num_samples < 1) throw ConfigError("train: empty training set");
  if (cfg.batch < 1 || cfg.epochs < 1) throw ConfigError("train: batch and epochs must be >= 1");

  AdamState adam(store, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  TrainResult result;
  std::vector<Tensor> best_snapshot = store.snapshot();
  int stale = 0;

  std::vector<int> order(static_cast<std::size_t>(num_samples));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = Rng::stream(cfg.seed, 0x10000000ULL + static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int batches = 0;
    for (int start = 0; start < num_samples; start += cfg.batch) {
      const int len = std::min(cfg.batch, num_samples - start);
      std::vector<int> batch(order.begin() + start, order.begin() + start + len);
      Rng batch_rng = Rng::stream(
          cfg.seed, 0x20000000ULL + (static_cast<std::uint64_t>(epoch) << 20) +
                        static_cast<std::uint64_t>(batches));
      Tape tape;
      std::vector<Tensor> p = store.watch_all(tape);
      Tensor loss = batch_loss(p, batch, batch_rng);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss_value;
      ++batches;
      tape.backward(loss);
      adam_step(store, tape.leaf_grads(), adam);
      if (after_step) after_step();
    }

    EpochLog log;
    log.train_loss = loss_sum / std::max(batches, 1);
    log.val_metric = validate(store.values());
    result.epochs.push_back(log);

    const bool improved =
        result.best_epoch < 0 ||
        (lower_is_better ? log.val_metric < result.best_val : log.val_metric > result.best_val);
    if (improved) {
      result.best_epoch = epoch;
      result.best_val = log.val_metric;
      best_snapshot = store.snapshot();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }

  store.restore(best_snapshot);
  return result;
}

}  // namespace mtwb
