#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ttnlab/tensor.hpp"

namespace ttnlab {

enum class LayerKind { conv2d, linear, relu, maxpool2d, globalavgpool, batchnorm2d };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

/// One layer of a sequential network. Field meaning depends on `kind`:
/// conv2d and linear use in/out channels (features for linear), conv2d and
/// maxpool2d use kernel/stride, conv2d uses padding, batchnorm2d uses
/// `out_channels` as its channel count.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0);
  static LayerSpec linear(std::size_t in, std::size_t out);
  static LayerSpec relu();
  static LayerSpec maxpool2d(std::size_t kernel, std::size_t stride);
  static LayerSpec globalavgpool();
  static LayerSpec batchnorm2d(std::size_t channels);

  bool has_parameters() const {
    return kind == LayerKind::conv2d || kind == LayerKind::linear || kind == LayerKind::batchnorm2d;
  }

  bool operator==(const LayerSpec&) const = default;
};

/// Per-sample output shape of `layer` applied to per-sample input `in`.
/// Throws shape_mismatch when the layer cannot consume `in`.
Shape layer_output_shape(const LayerSpec& layer, const Shape& in);

/// Running (source) statistics of one BatchNorm layer.
struct BnRunningStats {
  std::vector<float> mean;
  std::vector<float> var;

  bool operator==(const BnRunningStats&) const = default;
};

/// Everything needed to run a trained network: topology, parameters and the
/// frozen per-BN-layer source statistics.
struct ModelCheckpoint {
  Shape input_shape;  // per sample, e.g. {3, 16, 16}
  std::vector<LayerSpec> layers;
  std::map<std::string, Tensor> parameters;
  std::vector<BnRunningStats> bn_source_stats;  // one entry per batchnorm2d layer, in order
  std::size_t class_count = 0;
  double epsilon = 1e-5;
  std::uint64_t seed = 0;

  std::size_t bn_layer_count() const;
  /// Positions in `layers` of the batchnorm2d layers.
  std::vector<std::size_t> bn_layer_positions() const;
  std::vector<std::size_t> bn_channel_counts() const;

  const Tensor& parameter(std::size_t layer, std::string_view role) const;
  Tensor& parameter(std::size_t layer, std::string_view role);

  /// Checks shape compatibility, parameter presence and source-stat sizes.
  void validate() const;
};

std::string parameter_name(std::size_t layer, std::string_view role);

/// Default desk-scale classifier: conv3x3+BN+ReLU blocks with the given
/// widths, stride-2 convolution at the start of every `downsample_every`-th
/// block group (except the first), global average pooling and a linear head.
std::vector<LayerSpec> default_architecture(std::size_t in_channels, std::size_t class_count,
                                            const std::vector<std::size_t>& widths,
                                            std::size_t downsample_every = 2);

/// He-normal weights, zero biases, unit BN scale, zero BN shift, source stats
/// mean 0 / var 1.
ModelCheckpoint init_model(Shape input_shape, std::vector<LayerSpec> layers, std::size_t class_count,
                           std::uint64_t seed, double epsilon = 1e-5);

}  // namespace ttnlab
