#include "ttnlab/model.hpp"

#include <cmath>
#include <random>

#include "ttnlab/error.hpp"

namespace ttnlab {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::globalavgpool: return "globalavgpool";
    case LayerKind::batchnorm2d: return "batchnorm2d";
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (auto kind : {LayerKind::conv2d, LayerKind::linear, LayerKind::relu, LayerKind::maxpool2d,
                    LayerKind::globalavgpool, LayerKind::batchnorm2d})
    if (to_string(kind) == name) return kind;
  fail(ErrorKind::bad_format, "unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  return {LayerKind::conv2d, in, out, kernel, stride, padding};
}
LayerSpec LayerSpec::linear(std::size_t in, std::size_t out) { return {LayerKind::linear, in, out, 0, 1, 0}; }
LayerSpec LayerSpec::relu() { return {LayerKind::relu, 0, 0, 0, 1, 0}; }
LayerSpec LayerSpec::maxpool2d(std::size_t kernel, std::size_t stride) {
  return {LayerKind::maxpool2d, 0, 0, kernel, stride, 0};
}
LayerSpec LayerSpec::globalavgpool() { return {LayerKind::globalavgpool, 0, 0, 0, 1, 0}; }
LayerSpec LayerSpec::batchnorm2d(std::size_t channels) {
  return {LayerKind::batchnorm2d, channels, channels, 0, 1, 0};
}

Shape layer_output_shape(const LayerSpec& layer, const Shape& in) {
  auto expect = [&](bool ok, const std::string& what) {
    require(ok, ErrorKind::shape_mismatch,
            std::string(to_string(layer.kind)) + ": " + what + " (input " + shape_string(in) + ")");
  };
  switch (layer.kind) {
    case LayerKind::conv2d: {
      expect(in.size() == 3, "expects [C,H,W] input");
      expect(in[0] == layer.in_channels, "expects " + std::to_string(layer.in_channels) + " input channels");
      expect(layer.kernel >= 1 && layer.stride >= 1 && layer.out_channels >= 1, "invalid conv parameters");
      expect(in[1] + 2 * layer.padding >= layer.kernel && in[2] + 2 * layer.padding >= layer.kernel,
             "kernel larger than padded input");
      return {layer.out_channels, (in[1] + 2 * layer.padding - layer.kernel) / layer.stride + 1,
              (in[2] + 2 * layer.padding - layer.kernel) / layer.stride + 1};
    }
    case LayerKind::linear:
      expect(shape_numel(in) == layer.in_channels, "expects " + std::to_string(layer.in_channels) + " features");
      expect(layer.out_channels >= 1, "invalid output size");
      return {layer.out_channels};
    case LayerKind::relu:
      return in;
    case LayerKind::maxpool2d:
      expect(in.size() == 3, "expects [C,H,W] input");
      expect(layer.kernel >= 1 && layer.stride >= 1, "invalid pool parameters");
      expect(in[1] >= layer.kernel && in[2] >= layer.kernel, "pool window larger than input");
      return {in[0], (in[1] - layer.kernel) / layer.stride + 1, (in[2] - layer.kernel) / layer.stride + 1};
    case LayerKind::globalavgpool:
      expect(in.size() == 3, "expects [C,H,W] input");
      return {in[0], 1, 1};
    case LayerKind::batchnorm2d:
      expect(!in.empty() && in[0] == layer.out_channels,
             "expects " + std::to_string(layer.out_channels) + " channels");
      return in;
  }
  return in;
}

std::string parameter_name(std::size_t layer, std::string_view role) {
  return "layer" + std::to_string(layer) + "." + std::string(role);
}

std::size_t ModelCheckpoint::bn_layer_count() const { return bn_layer_positions().size(); }

std::vector<std::size_t> ModelCheckpoint::bn_layer_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::batchnorm2d) out.push_back(i);
  return out;
}

std::vector<std::size_t> ModelCheckpoint::bn_channel_counts() const {
  std::vector<std::size_t> out;
  for (const auto& l : layers)
    if (l.kind == LayerKind::batchnorm2d) out.push_back(l.out_channels);
  return out;
}

const Tensor& ModelCheckpoint::parameter(std::size_t layer, std::string_view role) const {
  auto it = parameters.find(parameter_name(layer, role));
  require(it != parameters.end(), ErrorKind::invalid_argument, "missing parameter " + parameter_name(layer, role));
  return it->second;
}

Tensor& ModelCheckpoint::parameter(std::size_t layer, std::string_view role) {
  auto it = parameters.find(parameter_name(layer, role));
  require(it != parameters.end(), ErrorKind::invalid_argument, "missing parameter " + parameter_name(layer, role));
  return it->second;
}

namespace {

std::vector<std::pair<std::string, Shape>> expected_parameters(std::size_t index, const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::conv2d:
      return {{"weight", {l.out_channels, l.in_channels, l.kernel, l.kernel}}, {"bias", {l.out_channels}}};
    case LayerKind::linear:
      return {{"weight", {l.out_channels, l.in_channels}}, {"bias", {l.out_channels}}};
    case LayerKind::batchnorm2d:
      return {{"gamma", {l.out_channels}}, {"beta", {l.out_channels}}};
    default:
      (void)index;
      return {};
  }
}

}  // namespace

void ModelCheckpoint::validate() const {
  require(!input_shape.empty(), ErrorKind::shape_mismatch, "model has no input shape");
  require(epsilon > 0.0, ErrorKind::invalid_argument, "epsilon must be positive");
  Shape shape = input_shape;
  std::size_t bn = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    try {
      shape = layer_output_shape(layers[i], shape);
    } catch (const Error& e) {
      fail(ErrorKind::shape_mismatch, "layer " + std::to_string(i) + ": " + e.detail());
    }
    for (const auto& [role, expected] : expected_parameters(i, layers[i])) {
      auto it = parameters.find(parameter_name(i, role));
      require(it != parameters.end(), ErrorKind::bad_format, "missing parameter " + parameter_name(i, role));
      require(it->second.shape() == expected, ErrorKind::shape_mismatch,
              parameter_name(i, role) + " has shape " + shape_string(it->second.shape()) + ", expected " +
                  shape_string(expected));
    }
    if (layers[i].kind == LayerKind::batchnorm2d) {
      require(bn < bn_source_stats.size(), ErrorKind::bad_format, "missing source stats for BN layer " + std::to_string(bn));
      const auto& s = bn_source_stats[bn];
      require(s.mean.size() == layers[i].out_channels && s.var.size() == layers[i].out_channels,
              ErrorKind::shape_mismatch, "source stats of BN layer " + std::to_string(bn) + " have wrong length");
      for (float v : s.var)
        require(v >= 0.0f && std::isfinite(v), ErrorKind::invalid_argument, "negative or non-finite running variance");
      ++bn;
    }
  }
  require(bn == bn_source_stats.size(), ErrorKind::bad_format, "more source stats than BN layers");
  require(shape_numel(shape) == class_count, ErrorKind::shape_mismatch,
          "network output " + shape_string(shape) + " does not match class count " + std::to_string(class_count));
}

std::vector<LayerSpec> default_architecture(std::size_t in_channels, std::size_t class_count,
                                            const std::vector<std::size_t>& widths, std::size_t downsample_every) {
  require(!widths.empty() && downsample_every >= 1, ErrorKind::invalid_argument, "empty architecture");
  std::vector<LayerSpec> layers;
  std::size_t channels = in_channels;
  for (std::size_t b = 0; b < widths.size(); ++b) {
    const std::size_t stride = (b > 0 && b % downsample_every == 0) ? 2 : 1;
    layers.push_back(LayerSpec::conv2d(channels, widths[b], 3, stride, 1));
    layers.push_back(LayerSpec::batchnorm2d(widths[b]));
    layers.push_back(LayerSpec::relu());
    channels = widths[b];
  }
  layers.push_back(LayerSpec::globalavgpool());
  layers.push_back(LayerSpec::linear(channels, class_count));
  return layers;
}

ModelCheckpoint init_model(Shape input_shape, std::vector<LayerSpec> layers, std::size_t class_count,
                           std::uint64_t seed, double epsilon) {
  ModelCheckpoint model;
  model.input_shape = std::move(input_shape);
  model.layers = std::move(layers);
  model.class_count = class_count;
  model.epsilon = epsilon;
  model.seed = seed;

  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    for (const auto& [role, shape] : expected_parameters(i, l)) {
      Tensor t(shape);
      if (role == "weight") {
        const std::size_t fan_in = shape_numel(shape) / shape[0];
        std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / static_cast<double>(fan_in))));
        for (auto& v : t.values()) v = dist(rng);
      } else if (role == "gamma") {
        for (auto& v : t.values()) v = 1.0f;
      }
      model.parameters.emplace(parameter_name(i, role), std::move(t));
    }
    if (l.kind == LayerKind::batchnorm2d)
      model.bn_source_stats.push_back({std::vector<float>(l.out_channels, 0.0f), std::vector<float>(l.out_channels, 1.0f)});
  }
  model.validate();
  return model;
}

}  // namespace ttnlab
