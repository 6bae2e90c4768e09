#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "ttnlab/model.hpp"
#include "ttnlab/tensor.hpp"

namespace ttnlab {

/// Per-channel normalization statistics. `sigma` is a standard deviation that
/// already includes epsilon, i.e. sqrt(var + eps), so it is always > 0.
struct ChannelStats {
  std::vector<float> mu;
  std::vector<float> sigma;

  std::size_t size() const noexcept { return mu.size(); }
  bool operator==(const ChannelStats&) const = default;
};

/// Bit 1 = normalize the channel with target (batch) statistics,
/// bit 0 = keep the source statistics.
struct ChannelMask {
  std::vector<std::uint8_t> bits;

  static ChannelMask all_ones(std::size_t channels) { return {std::vector<std::uint8_t>(channels, 1)}; }
  static ChannelMask all_zeros(std::size_t channels) { return {std::vector<std::uint8_t>(channels, 0)}; }

  std::size_t size() const noexcept { return bits.size(); }
  /// Number of channels kept on source statistics.
  std::size_t frozen_count() const noexcept;
  bool operator==(const ChannelMask&) const = default;
};

/// Mean over (N, spatial) and sqrt(biased variance + eps) per channel of a
/// [N, F, ...] tensor, accumulated in double.
ChannelStats compute_batch_stats(const Tensor& x, double eps);

/// Source statistics of a BN layer in the same (mu, sigma) form as
/// compute_batch_stats, sigma = sqrt(running_var + eps).
ChannelStats source_channel_stats(const BnRunningStats& running, double eps);

/// out = gamma * (x - mu) / sigma + beta, per channel of a [N, F, ...] tensor.
Tensor bn_apply(const Tensor& x, const ChannelStats& stats, std::span<const float> gamma, std::span<const float> beta);

/// Elementwise selection: mask bit 1 takes target, 0 takes source.
ChannelStats hybrid_stats(const ChannelMask& mask, const ChannelStats& source, const ChannelStats& target);

struct SourceMode {};
struct BatchMode {};

/// Per-BN-layer stats to fall back on plus the channel mask selecting which
/// channels are renormalized with the batch.
struct HybridLayer {
  ChannelStats source;
  ChannelMask mask;
};

struct HybridMode {
  std::vector<HybridLayer> layers;
};

using BNMode = std::variant<SourceMode, BatchMode, HybridMode>;

/// Hybrid mode over the model's own source statistics with the given masks.
HybridMode make_hybrid_mode(const ModelCheckpoint& model, std::vector<ChannelMask> masks);

/// Layer-limited test-time normalization: BN layers [0, up_to) use batch
/// statistics, the rest use source statistics.
HybridMode make_layer_limited_mode(const ModelCheckpoint& model, std::size_t up_to);

}  // namespace ttnlab
