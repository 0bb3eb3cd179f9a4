// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "mtwb/adam.hpp"
#include "mtwb/param_store.hpp"
#include "mtwb/rng.hpp"

namespace mtwb {

struct TrainConfig {
  double lr = 1e-3;
  int batch = 64;
  int epochs = 50;
  int patience = 10;  // early stop after this many epochs without improvement
  std::uint64_t seed = 1;
};

struct EpochLog {
  double train_loss = 0.0;
  double val_metric = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  int best_epoch = -1;      // 0-based
  double best_val = 0.0;
  bool early_stopped = false;
};

// Mean per-sample loss for one batch; `rng` is the batch's deterministic
// noise/SNR stream.
using BatchLossFn =
    std::function<Tensor(const std::vector<Tensor>& p, const std::vector<int>& batch, Rng& rng)>;
using ValidateFn = std::function<double(const std::vector<Tensor>& p)>;

// Adam training over `store` with per-epoch shuffling, divergence guard
// (NumericError on non-finite loss), per-epoch validation, and early
// stopping. The store is left at the best-validation snapshot.
TrainResult run_training(ParamStore& store, const TrainConfig& cfg, int num_samples,
                         const BatchLossFn& batch_loss, const ValidateFn& validate,
                         const std::function<void()>& after_step = {},
                         bool lower_is_better = true);

}  // namespace mtwb
