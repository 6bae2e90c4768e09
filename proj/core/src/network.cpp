#include "ttnlab/network.hpp"

#include <cmath>
#include <limits>
#include <type_traits>

#include "ttnlab/error.hpp"

namespace ttnlab {

namespace {

void check_input(const ModelCheckpoint& model, const Tensor& x) {
  bool ok = x.rank() == model.input_shape.size() + 1;
  for (std::size_t i = 0; ok && i < model.input_shape.size(); ++i) ok = x.dim(i + 1) == model.input_shape[i];
  require(ok, ErrorKind::shape_mismatch,
          "input " + shape_string(x.shape()) + " does not match model input [N]+" + shape_string(model.input_shape));
}

Tensor flatten_rows(Tensor t) {
  const std::size_t n = t.dim(0);
  return t.reshaped({n, t.numel() / n});
}

std::string layer_label(const ModelCheckpoint& model, std::size_t i) {
  return "layer " + std::to_string(i) + " (" + std::string(to_string(model.layers[i].kind)) + ")";
}

}  // namespace

ForwardResult forward(const ModelCheckpoint& model, const Tensor& x, const BNMode& mode,
                      const ForwardOptions& options) {
  check_input(model, x);
  if (const auto* hybrid = std::get_if<HybridMode>(&mode))
    require(hybrid->layers.size() == model.bn_source_stats.size(), ErrorKind::invalid_argument,
            "hybrid mode supplies " + std::to_string(hybrid->layers.size()) + " layers, model has " +
                std::to_string(model.bn_source_stats.size()) + " BN layers");

  ForwardResult result;
  Tensor h = x;
  std::size_t bn = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& layer = model.layers[i];
    try {
      switch (layer.kind) {
        case LayerKind::conv2d:
          h = kernels::conv2d_forward(h, model.parameter(i, "weight"), model.parameter(i, "bias"), layer.stride,
                                      layer.padding);
          break;
        case LayerKind::linear:
          h = kernels::linear_forward(h, model.parameter(i, "weight"), model.parameter(i, "bias"));
          break;
        case LayerKind::relu:
          h = kernels::relu_forward(h);
          break;
        case LayerKind::maxpool2d:
          h = kernels::maxpool2d_forward(h, layer.kernel, layer.stride, nullptr);
          break;
        case LayerKind::globalavgpool:
          h = kernels::globalavgpool_forward(h);
          break;
        case LayerKind::batchnorm2d: {
          require(h.rank() >= 2 && h.dim(1) == layer.out_channels, ErrorKind::shape_mismatch,
                  "expects " + std::to_string(layer.out_channels) + " channels, got " + shape_string(h.shape()));
          ChannelStats applied;
          std::visit(
              [&](const auto& m) {
                using M = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<M, SourceMode>) {
                  applied = source_channel_stats(model.bn_source_stats[bn], model.epsilon);
                } else if constexpr (std::is_same_v<M, BatchMode>) {
                  applied = compute_batch_stats(h, model.epsilon);
                  result.batch_stats.push_back(applied);
                } else {
                  const HybridLayer& hl = m.layers[bn];
                  ChannelStats target = compute_batch_stats(h, model.epsilon);
                  applied = hybrid_stats(hl.mask, hl.source, target);
                  result.batch_stats.push_back(std::move(target));
                }
              },
              mode);
          if (options.record_bn_inputs) result.bn_inputs.push_back(h);
          h = bn_apply(h, applied, model.parameter(i, "gamma").values(), model.parameter(i, "beta").values());
          result.bn_stats.push_back(std::move(applied));
          ++bn;
          break;
        }
      }
    } catch (const Error& e) {
      throw Error(e.kind(), layer_label(model, i) + ": " + e.detail());
    }
  }
  result.logits = flatten_rows(std::move(h));
  return result;
}

Tensor forward_train(const ModelCheckpoint& model, const Tensor& x, TrainingTape& tape) {
  check_input(model, x);
  tape = TrainingTape{};
  Tensor h = x;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& layer = model.layers[i];
    tape.inputs.push_back(h);
    try {
      switch (layer.kind) {
        case LayerKind::conv2d:
          h = kernels::conv2d_forward(h, model.parameter(i, "weight"), model.parameter(i, "bias"), layer.stride,
                                      layer.padding);
          break;
        case LayerKind::linear:
          h = kernels::linear_forward(h, model.parameter(i, "weight"), model.parameter(i, "bias"));
          break;
        case LayerKind::relu:
          h = kernels::relu_forward(h);
          break;
        case LayerKind::maxpool2d:
          h = kernels::maxpool2d_forward(h, layer.kernel, layer.stride, &tape.argmax[i]);
          break;
        case LayerKind::globalavgpool:
          h = kernels::globalavgpool_forward(h);
          break;
        case LayerKind::batchnorm2d:
          h = kernels::batchnorm_train_forward(h, model.parameter(i, "gamma"), model.parameter(i, "beta"),
                                               model.epsilon, tape.bn[i]);
          break;
      }
    } catch (const Error& e) {
      throw Error(e.kind(), layer_label(model, i) + ": " + e.detail());
    }
  }
  return flatten_rows(std::move(h));
}

std::map<std::string, Tensor> backward(const ModelCheckpoint& model, const TrainingTape& tape, const Tensor& dlogits) {
  require(tape.inputs.size() == model.layers.size(), ErrorKind::invalid_argument, "tape does not match model");
  std::map<std::string, Tensor> grads;
  Tensor d = dlogits;
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    const LayerSpec& layer = model.layers[i];
    const Tensor& in = tape.inputs[i];
    switch (layer.kind) {
      case LayerKind::conv2d: {
        const Tensor& w = model.parameter(i, "weight");
        const Shape out_shape = {in.dim(0), w.dim(0), (in.dim(2) + 2 * layer.padding - layer.kernel) / layer.stride + 1,
                                 (in.dim(3) + 2 * layer.padding - layer.kernel) / layer.stride + 1};
        auto g = kernels::conv2d_backward(in, w, layer.stride, layer.padding, d.reshaped(out_shape));
        grads[parameter_name(i, "weight")] = std::move(g.dweight);
        grads[parameter_name(i, "bias")] = std::move(g.dbias);
        d = std::move(g.dx);
        break;
      }
      case LayerKind::linear: {
        auto g = kernels::linear_backward(in, model.parameter(i, "weight"), d.reshaped({in.dim(0), layer.out_channels}));
        grads[parameter_name(i, "weight")] = std::move(g.dweight);
        grads[parameter_name(i, "bias")] = std::move(g.dbias);
        d = std::move(g.dx);
        break;
      }
      case LayerKind::relu:
        d = kernels::relu_backward(in, d.reshaped(in.shape()));
        break;
      case LayerKind::maxpool2d:
        d = kernels::maxpool2d_backward(in.shape(), tape.argmax.at(i), d);
        break;
      case LayerKind::globalavgpool:
        d = kernels::globalavgpool_backward(in.shape(), d);
        break;
      case LayerKind::batchnorm2d: {
        auto g = kernels::batchnorm_train_backward(tape.bn.at(i), model.parameter(i, "gamma"), d.reshaped(in.shape()));
        grads[parameter_name(i, "gamma")] = std::move(g.dgamma);
        grads[parameter_name(i, "beta")] = std::move(g.dbeta);
        d = std::move(g.dx);
        break;
      }
    }
  }
  return grads;
}

Tensor softmax(const Tensor& logits) {
  require(logits.rank() == 2, ErrorKind::shape_mismatch, "softmax expects [N,C]");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = static_cast<float>(std::exp(row[j] - mx) / sum);
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, ErrorKind::shape_mismatch, "argmax expects [N,C]");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits[i * c + j] > logits[i * c + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* dlogits) {
  require(logits.rank() == 2 && logits.dim(0) == labels.size(), ErrorKind::shape_mismatch,
          "cross_entropy: logits " + shape_string(logits.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (dlogits) *dlogits = Tensor(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < c, ErrorKind::invalid_argument,
            "label " + std::to_string(labels[i]) + " out of range");
    const float* row = logits.data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    total += lse - row[labels[i]];
    if (dlogits) {
      for (std::size_t j = 0; j < c; ++j) {
        const double p = std::exp(row[j] - lse);
        (*dlogits)[i * c + j] = static_cast<float>((p - (static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0)) /
                                                   static_cast<double>(n));
      }
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace ttnlab
