#include "ttnlab/bn_stats.hpp"

#include <cmath>

#include "ttnlab/error.hpp"

namespace ttnlab {

std::size_t ChannelMask::frozen_count() const noexcept {
  std::size_t n = 0;
  for (auto b : bits) n += b == 0 ? 1 : 0;
  return n;
}

ChannelStats compute_batch_stats(const Tensor& x, double eps) {
  require(x.rank() >= 2, ErrorKind::shape_mismatch, "batch stats need a [N,F,...] tensor, got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t f = x.dim(1);
  const std::size_t spatial = x.numel() / (n * f);
  const std::size_t count = n * spatial;
  require(count >= 2, ErrorKind::degenerate_batch,
          "need at least 2 values per channel, got " + std::to_string(count));

  std::vector<double> sum(f, 0.0);
  std::vector<double> sq(f, 0.0);
  const float* p = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < f; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < spatial; ++j) s += p[j];
      sum[c] += s;
      p += spatial;
    }
  }
  std::vector<double> mean(f);
  for (std::size_t c = 0; c < f; ++c) mean[c] = sum[c] / static_cast<double>(count);
  // Second pass around the mean; the one-pass formula loses precision when
  // |mean| >> std.
  p = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < f; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < spatial; ++j) {
        const double d = p[j] - mean[c];
        s += d * d;
      }
      sq[c] += s;
      p += spatial;
    }
  }

  ChannelStats out;
  out.mu.resize(f);
  out.sigma.resize(f);
  for (std::size_t c = 0; c < f; ++c) {
    out.mu[c] = static_cast<float>(mean[c]);
    out.sigma[c] = static_cast<float>(std::sqrt(sq[c] / static_cast<double>(count) + eps));
  }
  return out;
}

ChannelStats source_channel_stats(const BnRunningStats& running, double eps) {
  require(running.mean.size() == running.var.size(), ErrorKind::shape_mismatch, "running stats length mismatch");
  ChannelStats out;
  out.mu = running.mean;
  out.sigma.resize(running.var.size());
  for (std::size_t c = 0; c < running.var.size(); ++c)
    out.sigma[c] = static_cast<float>(std::sqrt(static_cast<double>(running.var[c]) + eps));
  return out;
}

Tensor bn_apply(const Tensor& x, const ChannelStats& stats, std::span<const float> gamma, std::span<const float> beta) {
  require(x.rank() >= 2, ErrorKind::shape_mismatch, "bn_apply needs a [N,F,...] tensor");
  const std::size_t n = x.dim(0);
  const std::size_t f = x.dim(1);
  require(stats.mu.size() == f && stats.sigma.size() == f && gamma.size() == f && beta.size() == f,
          ErrorKind::shape_mismatch, "bn_apply parameter length does not match " + std::to_string(f) + " channels");
  const std::size_t spatial = x.numel() / (n * f);
  Tensor out(x.shape());
  const float* in = x.data();
  float* o = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < f; ++c) {
      const float mu = stats.mu[c];
      const float sigma = stats.sigma[c];
      const float g = gamma[c];
      const float b = beta[c];
      for (std::size_t j = 0; j < spatial; ++j) o[j] = g * ((in[j] - mu) / sigma) + b;
      in += spatial;
      o += spatial;
    }
  }
  return out;
}

ChannelStats hybrid_stats(const ChannelMask& mask, const ChannelStats& source, const ChannelStats& target) {
  const std::size_t f = mask.size();
  require(source.mu.size() == f && source.sigma.size() == f && target.mu.size() == f && target.sigma.size() == f,
          ErrorKind::shape_mismatch, "hybrid_stats length mismatch");
  ChannelStats out;
  out.mu.resize(f);
  out.sigma.resize(f);
  for (std::size_t c = 0; c < f; ++c) {
    const bool adapt = mask.bits[c] != 0;
    out.mu[c] = adapt ? target.mu[c] : source.mu[c];
    out.sigma[c] = adapt ? target.sigma[c] : source.sigma[c];
  }
  return out;
}

HybridMode make_hybrid_mode(const ModelCheckpoint& model, std::vector<ChannelMask> masks) {
  require(masks.size() == model.bn_source_stats.size(), ErrorKind::invalid_argument,
          "need one mask per BN layer: got " + std::to_string(masks.size()) + ", model has " +
              std::to_string(model.bn_source_stats.size()));
  HybridMode mode;
  for (std::size_t k = 0; k < masks.size(); ++k)
    mode.layers.push_back({source_channel_stats(model.bn_source_stats[k], model.epsilon), std::move(masks[k])});
  return mode;
}

HybridMode make_layer_limited_mode(const ModelCheckpoint& model, std::size_t up_to) {
  const auto channels = model.bn_channel_counts();
  require(up_to <= channels.size(), ErrorKind::invalid_argument,
          "layer limit " + std::to_string(up_to) + " exceeds BN layer count " + std::to_string(channels.size()));
  std::vector<ChannelMask> masks;
  for (std::size_t k = 0; k < channels.size(); ++k)
    masks.push_back(k < up_to ? ChannelMask::all_ones(channels[k]) : ChannelMask::all_zeros(channels[k]));
  return make_hybrid_mode(model, std::move(masks));
}

}  // namespace ttnlab
