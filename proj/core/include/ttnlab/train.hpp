#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>

#include "ttnlab/data.hpp"
#include "ttnlab/model.hpp"

namespace ttnlab {

struct TrainConfig {
  std::size_t epochs = 8;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;  // stored in the checkpoint
  std::uint64_t seed = 1;
  /// Cap on the number of training samples used to freeze the final BN
  /// source statistics (0 keeps the running averages from training).
  std::size_t freeze_samples = 4096;

  void validate() const;
};

struct OptimizerState {
  std::map<std::string, Tensor> velocity;
};

/// One SGD-with-momentum step on mean cross-entropy. BN layers run in
/// training mode and their running statistics are updated with an
/// exponential moving average. Returns the loss before the update.
double backward_and_step(ModelCheckpoint& model, const Tensor& batch, std::span<const int> labels,
                         OptimizerState& optimizer, const TrainConfig& config);

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Trains from a fresh initialization and freezes BN source statistics.
/// Deterministic given (dataset, layers, init seed, config).
ModelCheckpoint train(const LabeledDataset& dataset, std::vector<LayerSpec> layers, std::uint64_t model_init_seed,
                      const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Replaces every BN layer's source statistics with the exact statistics of
/// `images` propagated layer by layer (each layer normalized with its newly
/// frozen statistics before feeding the next).
void freeze_source_stats(ModelCheckpoint& model, const Tensor& images);

/// Source-mode accuracy over the whole dataset.
double evaluate_accuracy(const ModelCheckpoint& model, const LabeledDataset& dataset, std::size_t chunk = 256);

}  // namespace ttnlab
