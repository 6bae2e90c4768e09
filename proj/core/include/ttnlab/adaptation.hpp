#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttnlab/bn_stats.hpp"
#include "ttnlab/model.hpp"
#include "ttnlab/scoring.hpp"
#include "ttnlab/tensor.hpp"

namespace ttnlab {

/// Probability vector over classes weighting the per-class channel scores.
struct ClassPrior {
  std::vector<double> p;

  static ClassPrior uniform(std::size_t class_count);
  static ClassPrior one_hot(std::size_t cls, std::size_t class_count);
  /// Normalized label histogram.
  static ClassPrior from_labels(std::span<const int> labels, std::size_t class_count);
  /// Normalizes nonnegative weights with a positive sum.
  static ClassPrior from_weights(std::vector<double> weights);

  std::size_t size() const noexcept { return p.size(); }
  void validate(std::size_t class_count) const;
};

/// How the fraction of non-adapted channels grows with depth.
enum class DepthSchedule {
  linear,       // (k-1)/(K-1): 0 at the first BN layer, 1 at the last
  algorithmic,  // k/K
};

/// How the second pass estimates the class prior from first-pass outputs.
enum class PriorEstimate {
  hard,  // histogram of argmax predictions
  soft,  // mean softmax probabilities
};

struct AdaptOptions {
  DepthSchedule schedule = DepthSchedule::linear;
  PriorEstimate prior_estimate = PriorEstimate::hard;
  /// Replace every layer's depth fraction with this value.
  std::optional<double> forced_fraction;
};

/// Result of one hybrid adaptation pass over a batch.
struct AdaptationPlan {
  std::vector<ChannelMask> masks;
  std::vector<ChannelStats> target_stats;
  std::vector<ChannelStats> hybrid_stats;
  std::vector<double> fractions;
  ClassPrior prior;
};

/// sum_c weights[c] * table[c][k][f]; weights need not be normalized.
std::vector<double> weighted_channel_scores(const ScoreTable& table, std::span<const double> weights, std::size_t k);
std::vector<double> weighted_channel_scores(const ScoreTable& table, const ClassPrior& prior, std::size_t k);

/// Fraction of channels kept on source statistics at 1-based BN layer k of K.
double depth_fraction(std::size_t k, std::size_t layer_count, DepthSchedule schedule = DepthSchedule::linear);

/// The floor(fraction * F) highest-scoring channels get bit 0 (kept on source
/// statistics), ties going to the lower channel index; all others get 1.
ChannelMask select_mask(std::span<const double> scores, double fraction);

/// Number of channels `select_mask` freezes for F channels at `fraction`.
std::size_t frozen_channel_count(std::size_t channels, double fraction);

struct HybridResult {
  std::vector<int> predictions;
  Tensor logits;
  AdaptationPlan plan;
};

/// Single hybrid pass: prior-weighted scores, depth-scheduled top-R masks,
/// and sequential hybrid normalization of the batch.
HybridResult hybrid_forward(const ModelCheckpoint& model, const Tensor& batch, const ScoreTable& table,
                            const ClassPrior& prior, const AdaptOptions& options = {});

/// Runs a hybrid pass with explicitly supplied masks.
HybridResult hybrid_forward_with_masks(const ModelCheckpoint& model, const Tensor& batch, std::vector<ChannelMask> masks);

struct HybridTtnResult {
  std::vector<int> predictions;              // second pass, the method's output
  std::vector<int> first_pass_predictions;   // uniform-prior pass
  ClassPrior final_prior;                    // pseudolabel prior used by pass 2
  AdaptationPlan first_plan;
  AdaptationPlan plan;
  Tensor logits;
};

/// Two passes: uniform prior, then the prior re-estimated from pass-1 outputs.
HybridTtnResult hybrid_ttn_predict(const ModelCheckpoint& model, const Tensor& batch, const ScoreTable& table,
                                   const AdaptOptions& options = {});

std::vector<int> ttn_predict(const ModelCheckpoint& model, const Tensor& batch);
std::vector<int> source_predict(const ModelCheckpoint& model, const Tensor& batch);
/// BN layers 1..up_to renormalize with the batch, the rest keep source stats.
std::vector<int> layer_limited_ttn(const ModelCheckpoint& model, const Tensor& batch, std::size_t up_to);

/// Depth schedule with seeded uniform random channel scores.
HybridResult hybrid_random_scores(const ModelCheckpoint& model, const Tensor& batch, std::uint64_t seed,
                                  const AdaptOptions& options = {});

std::vector<int> hybrid_with_prior(const ModelCheckpoint& model, const Tensor& batch, const ScoreTable& table,
                                   const ClassPrior& prior, const AdaptOptions& options = {});

/// Per BN layer, W2^2 between source statistics and the batch statistics of
/// each channel's input, propagating with source statistics.
std::vector<std::vector<double>> channel_sensitivity_ranking(const ModelCheckpoint& model, const Tensor& batch);

/// Per layer |top(a) ∩ top(b)| / ceil(fraction * F).
std::vector<double> top_fraction_overlap(const std::vector<std::vector<double>>& rank_a,
                                         const std::vector<std::vector<double>>& rank_b, double fraction);

/// Indices of the ceil(fraction * F) largest values, ties to lower index.
std::vector<std::size_t> top_fraction_indices(std::span<const double> values, double fraction);

enum class MethodKind {
  source,
  ttn,
  hybrid_ttn,
  hybrid_uniform,
  hybrid_oracle,
  hybrid_random_scores,
  layer_limited_ttn,
};

/// A test-time method as named in reports: "source", "ttn", "hybrid_ttn",
/// "hybrid_uniform", "hybrid_oracle", "hybrid_random", "layer_limited:<k>".
struct MethodId {
  MethodKind kind = MethodKind::source;
  std::size_t up_to = 0;

  std::string name() const;
  static MethodId parse(std::string_view name);
  bool operator==(const MethodId&) const = default;
};

/// Everything a method may consume besides the model and batch.
struct MethodContext {
  const ScoreTable* table = nullptr;
  std::span<const int> true_labels;  // oracle prior only
  std::uint64_t seed = 0;            // random scores only
  AdaptOptions options;
};

std::vector<int> run_method(const ModelCheckpoint& model, const Tensor& batch, const MethodId& method,
                            const MethodContext& context);

}  // namespace ttnlab
