#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ttnlab/bn_stats.hpp"
#include "ttnlab/layers.hpp"
#include "ttnlab/model.hpp"
#include "ttnlab/tensor.hpp"

namespace ttnlab {

struct ForwardOptions {
  /// Keep the pre-normalization input of every BN layer.
  bool record_bn_inputs = false;
};

struct ForwardResult {
  Tensor logits;                          // [N, C]
  std::vector<Tensor> bn_inputs;          // filled when requested
  std::vector<ChannelStats> bn_stats;     // statistics actually applied at each BN layer
  std::vector<ChannelStats> batch_stats;  // batch statistics of each BN input (Batch/Hybrid modes only)
};

/// Inference pass. Pure with respect to `model`; identical inputs give
/// bit-identical outputs.
ForwardResult forward(const ModelCheckpoint& model, const Tensor& x, const BNMode& mode,
                      const ForwardOptions& options = {});

/// Per-layer state kept by a training forward pass for backpropagation.
struct TrainingTape {
  std::vector<Tensor> inputs;
  std::map<std::size_t, kernels::BatchNormCache> bn;
  std::map<std::size_t, std::vector<std::uint32_t>> argmax;
};

/// Training-mode forward: BN layers normalize with the batch's own statistics.
Tensor forward_train(const ModelCheckpoint& model, const Tensor& x, TrainingTape& tape);

/// Gradients of every parameter, keyed like ModelCheckpoint::parameters.
std::map<std::string, Tensor> backward(const ModelCheckpoint& model, const TrainingTape& tape, const Tensor& dlogits);

/// Row-wise softmax of [N, C] logits.
Tensor softmax(const Tensor& logits);

std::vector<int> argmax_rows(const Tensor& logits);

/// Mean cross-entropy via log-sum-exp; writes d(loss)/d(logits) when `dlogits`
/// is non-null.
double cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* dlogits);

}  // namespace ttnlab
