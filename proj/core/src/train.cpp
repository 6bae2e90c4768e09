#include "ttnlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ttnlab/error.hpp"
#include "ttnlab/network.hpp"

namespace ttnlab {

void TrainConfig::validate() const {
  require(epochs >= 1 && batch_size >= 2, ErrorKind::invalid_argument, "epochs must be >= 1 and batch size >= 2");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorKind::invalid_argument, "learning rate must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::invalid_argument, "momentum must be in [0,1)");
  require(weight_decay >= 0.0, ErrorKind::invalid_argument, "weight decay must be >= 0");
  require(bn_momentum > 0.0 && bn_momentum <= 1.0, ErrorKind::invalid_argument, "BN momentum must be in (0,1]");
  require(bn_epsilon > 0.0, ErrorKind::invalid_argument, "BN epsilon must be positive");
}

namespace {

std::string non_finite_diagnostics(const ModelCheckpoint& model, const TrainingTape& tape, const Tensor& logits) {
  for (std::size_t i = 0; i < tape.inputs.size(); ++i) {
    const Tensor& out = i + 1 < tape.inputs.size() ? tape.inputs[i + 1] : logits;
    if (!out.all_finite())
      return "first non-finite output at layer " + std::to_string(i) + " (" + std::string(to_string(model.layers[i].kind)) + ")";
  }
  for (const auto& [name, p] : model.parameters)
    if (!p.all_finite()) return "parameter " + name + " is non-finite";
  return "logits finite, loss overflowed";
}

}  // namespace

double backward_and_step(ModelCheckpoint& model, const Tensor& batch, std::span<const int> labels,
                         OptimizerState& optimizer, const TrainConfig& config) {
  require(batch.rank() >= 1 && batch.dim(0) >= 1 && batch.dim(0) == labels.size(), ErrorKind::invalid_argument,
          "batch must be nonempty with one label per sample");
  for (int l : labels)
    require(l >= 0 && static_cast<std::size_t>(l) < model.class_count, ErrorKind::invalid_argument,
            "label " + std::to_string(l) + " out of range");

  TrainingTape tape;
  const Tensor logits = forward_train(model, batch, tape);
  Tensor dlogits;
  const double loss = cross_entropy(logits, labels, &dlogits);
  require(std::isfinite(loss), ErrorKind::non_finite, "training loss is non-finite: " + non_finite_diagnostics(model, tape, logits));

  auto grads = backward(model, tape, dlogits);
  const float lr = static_cast<float>(config.learning_rate);
  const float mu = static_cast<float>(config.momentum);
  const float wd = static_cast<float>(config.weight_decay);
  for (auto& [name, param] : model.parameters) {
    const Tensor& g = grads.at(name);
    auto [it, inserted] = optimizer.velocity.try_emplace(name, param.shape());
    Tensor& v = it->second;
    for (std::size_t i = 0; i < param.numel(); ++i) {
      v[i] = mu * v[i] + (g[i] + wd * param[i]);
      param[i] -= lr * v[i];
    }
  }

  std::size_t k = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].kind != LayerKind::batchnorm2d) continue;
    const auto& cache = tape.bn.at(i);
    const Tensor& in = tape.inputs[i];
    const double count = static_cast<double>(in.numel() / in.dim(1));
    const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
    auto& running = model.bn_source_stats[k++];
    for (std::size_t c = 0; c < running.mean.size(); ++c) {
      running.mean[c] = static_cast<float>((1.0 - config.bn_momentum) * running.mean[c] + config.bn_momentum * cache.mean[c]);
      running.var[c] =
          static_cast<float>((1.0 - config.bn_momentum) * running.var[c] + config.bn_momentum * cache.var[c] * unbias);
    }
  }
  return loss;
}

void freeze_source_stats(ModelCheckpoint& model, const Tensor& images) {
  const auto result = forward(model, images, BatchMode{});
  require(result.batch_stats.size() == model.bn_source_stats.size(), ErrorKind::invalid_argument,
          "BN layer count mismatch while freezing statistics");
  for (std::size_t k = 0; k < result.batch_stats.size(); ++k) {
    const auto& s = result.batch_stats[k];
    auto& running = model.bn_source_stats[k];
    running.mean = s.mu;
    for (std::size_t c = 0; c < s.sigma.size(); ++c) {
      const double sigma = s.sigma[c];
      running.var[c] = static_cast<float>(std::max(0.0, sigma * sigma - model.epsilon));
    }
  }
}

ModelCheckpoint train(const LabeledDataset& dataset, std::vector<LayerSpec> layers, std::uint64_t model_init_seed,
                      const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  dataset.validate(true);
  Shape input_shape(dataset.images.shape().begin() + 1, dataset.images.shape().end());
  ModelCheckpoint model = init_model(std::move(input_shape), std::move(layers), dataset.class_count, model_init_seed,
                                     config.bn_epsilon);

  std::mt19937_64 rng(config.seed);
  OptimizerState optimizer;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      if (end - start < 2) break;  // a single sample has no batch statistics
      std::span<const std::size_t> rows(order.data() + start, end - start);
      const Tensor batch = dataset.images.gather(rows);
      std::vector<int> labels;
      labels.reserve(rows.size());
      for (auto r : rows) labels.push_back(dataset.labels[r]);
      total += backward_and_step(model, batch, labels, optimizer, config);
      ++steps;
    }
    if (on_epoch) on_epoch(epoch, steps ? total / static_cast<double>(steps) : 0.0);
  }

  if (config.freeze_samples > 0) {
    std::vector<std::size_t> rows(dataset.size());
    std::iota(rows.begin(), rows.end(), 0);
    if (rows.size() > config.freeze_samples) {
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(config.freeze_samples);
      std::sort(rows.begin(), rows.end());
    }
    freeze_source_stats(model, dataset.images.gather(rows));
  }
  return model;
}

double evaluate_accuracy(const ModelCheckpoint& model, const LabeledDataset& dataset, std::size_t chunk) {
  require(dataset.size() > 0 && chunk > 0, ErrorKind::invalid_argument, "empty evaluation set");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < dataset.size(); start += chunk) {
    const std::size_t end = std::min(dataset.size(), start + chunk);
    const auto preds = argmax_rows(forward(model, dataset.images.slice(start, end), SourceMode{}).logits);
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == dataset.labels[start + i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

}  // namespace ttnlab
