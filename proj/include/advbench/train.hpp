#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "advbench/dataset.hpp"
#include "advbench/nn.hpp"

namespace advbench {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct SgdMomentumConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

using OptimizerConfig = std::variant<AdamConfig, SgdMomentumConfig>;

// Multiply the learning rate by `factor` once validation loss has failed to
// improve by at least `threshold` for `patience` consecutive epochs.
struct PlateauSchedule {
  double factor = 0.1;
  std::size_t patience = 5;
  double threshold = 1e-4;
};

struct TrainConfig {
  OptimizerConfig optimizer = AdamConfig{};
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::optional<PlateauSchedule> lr_schedule = PlateauSchedule{};
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  double val_accuracy = 0;
  double learning_rate = 0;
};

struct TrainResult {
  Network net;
  std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Minibatch training on mean softmax cross-entropy. Bitwise deterministic
// for a given (initial network, data, config). Throws kDivergence naming the
// epoch when the loss becomes non-finite.
TrainResult train(Network net, const LabeledDataset& train_set, const LabeledDataset& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace advbench
