#include "ttnlab/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ttnlab/error.hpp"
#include "ttnlab/network.hpp"

namespace ttnlab {

ClassPrior ClassPrior::uniform(std::size_t class_count) {
  require(class_count >= 1, ErrorKind::invalid_argument, "prior needs at least one class");
  return {std::vector<double>(class_count, 1.0 / static_cast<double>(class_count))};
}

ClassPrior ClassPrior::one_hot(std::size_t cls, std::size_t class_count) {
  require(cls < class_count, ErrorKind::invalid_argument, "one-hot class out of range");
  ClassPrior prior{std::vector<double>(class_count, 0.0)};
  prior.p[cls] = 1.0;
  return prior;
}

ClassPrior ClassPrior::from_labels(std::span<const int> labels, std::size_t class_count) {
  require(!labels.empty(), ErrorKind::invalid_argument, "prior from an empty label set");
  std::vector<double> counts(class_count, 0.0);
  for (int l : labels) {
    require(l >= 0 && static_cast<std::size_t>(l) < class_count, ErrorKind::invalid_argument, "label out of range");
    counts[static_cast<std::size_t>(l)] += 1.0;
  }
  return from_weights(std::move(counts));
}

ClassPrior ClassPrior::from_weights(std::vector<double> weights) {
  double sum = 0.0;
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), ErrorKind::invalid_argument, "prior weights must be finite and >= 0");
    sum += w;
  }
  require(sum > 0.0, ErrorKind::invalid_argument, "prior weights sum to zero");
  for (double& w : weights) w /= sum;
  return {std::move(weights)};
}

void ClassPrior::validate(std::size_t class_count) const {
  require(p.size() == class_count, ErrorKind::invalid_argument,
          "prior has " + std::to_string(p.size()) + " entries, expected " + std::to_string(class_count));
  double sum = 0.0;
  for (double v : p) {
    require(v >= 0.0, ErrorKind::invalid_argument, "prior has a negative entry");
    sum += v;
  }
  require(std::abs(sum - 1.0) <= 1e-9, ErrorKind::invalid_argument, "prior does not sum to 1");
}

std::vector<double> weighted_channel_scores(const ScoreTable& table, std::span<const double> weights, std::size_t k) {
  require(weights.size() == table.class_count(), ErrorKind::invalid_argument,
          "prior length " + std::to_string(weights.size()) + " does not match " + std::to_string(table.class_count()) +
              " classes");
  require(k < table.layer_count(), ErrorKind::invalid_argument, "BN layer index out of range");
  std::vector<double> scores(table.channel_counts()[k], 0.0);
  for (std::size_t c = 0; c < weights.size(); ++c) {
    if (weights[c] == 0.0) continue;
    const auto row = table.row(c, k);
    for (std::size_t f = 0; f < scores.size(); ++f) scores[f] += weights[c] * row[f];
  }
  return scores;
}

std::vector<double> weighted_channel_scores(const ScoreTable& table, const ClassPrior& prior, std::size_t k) {
  return weighted_channel_scores(table, std::span<const double>(prior.p), k);
}

double depth_fraction(std::size_t k, std::size_t layer_count, DepthSchedule schedule) {
  require(layer_count >= 1 && k >= 1 && k <= layer_count, ErrorKind::invalid_argument,
          "depth index " + std::to_string(k) + " outside [1," + std::to_string(layer_count) + "]");
  if (schedule == DepthSchedule::algorithmic) return static_cast<double>(k) / static_cast<double>(layer_count);
  if (layer_count == 1) return 1.0;
  return static_cast<double>(k - 1) / static_cast<double>(layer_count - 1);
}

std::size_t frozen_channel_count(std::size_t channels, double fraction) {
  require(fraction >= 0.0 && fraction <= 1.0, ErrorKind::invalid_argument, "fraction must be in [0,1]");
  // The small slack absorbs products like (1/3)*3 landing just below an integer.
  return std::min(channels, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(channels) + 1e-9)));
}

namespace {

std::vector<std::size_t> ranked_indices(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return order;
}

void require_batch(const Tensor& batch) {
  require(batch.rank() >= 1 && batch.dim(0) >= 2, ErrorKind::degenerate_batch,
          "test-time normalization needs a batch of at least 2 samples");
}

}  // namespace

ChannelMask select_mask(std::span<const double> scores, double fraction) {
  const std::size_t frozen = frozen_channel_count(scores.size(), fraction);
  const auto order = ranked_indices(scores);
  ChannelMask mask = ChannelMask::all_ones(scores.size());
  for (std::size_t i = 0; i < frozen; ++i) mask.bits[order[i]] = 0;
  return mask;
}

HybridResult hybrid_forward_with_masks(const ModelCheckpoint& model, const Tensor& batch, std::vector<ChannelMask> masks) {
  require_batch(batch);
  HybridResult result;
  result.plan.masks = masks;
  auto out = forward(model, batch, make_hybrid_mode(model, std::move(masks)));
  result.plan.target_stats = std::move(out.batch_stats);
  result.plan.hybrid_stats = std::move(out.bn_stats);
  result.predictions = argmax_rows(out.logits);
  result.logits = std::move(out.logits);
  return result;
}

namespace {

template <typename ScoresFor>
HybridResult scheduled_hybrid_pass(const ModelCheckpoint& model, const Tensor& batch, const AdaptOptions& options,
                                   ScoresFor&& scores_for) {
  const auto channels = model.bn_channel_counts();
  const std::size_t layer_count = channels.size();
  std::vector<ChannelMask> masks;
  std::vector<double> fractions;
  for (std::size_t k = 0; k < layer_count; ++k) {
    const double fraction = options.forced_fraction ? *options.forced_fraction
                                                    : depth_fraction(k + 1, layer_count, options.schedule);
    const std::vector<double> scores = scores_for(k);
    masks.push_back(select_mask(scores, fraction));
    fractions.push_back(fraction);
  }
  auto result = hybrid_forward_with_masks(model, batch, std::move(masks));
  result.plan.fractions = std::move(fractions);
  return result;
}

}  // namespace

HybridResult hybrid_forward(const ModelCheckpoint& model, const Tensor& batch, const ScoreTable& table,
                            const ClassPrior& prior, const AdaptOptions& options) {
  require_batch(batch);
  check_table_matches(table, model);
  require(prior.size() == model.class_count, ErrorKind::invalid_argument, "prior length does not match class count");
  auto result = scheduled_hybrid_pass(model, batch, options,
                                      [&](std::size_t k) { return weighted_channel_scores(table, prior, k); });
  result.plan.prior = prior;
  return result;
}

HybridTtnResult hybrid_ttn_predict(const ModelCheckpoint& model, const Tensor& batch, const ScoreTable& table,
                                   const AdaptOptions& options) {
  auto first = hybrid_forward(model, batch, table, ClassPrior::uniform(model.class_count), options);

  ClassPrior estimated;
  if (options.prior_estimate == PriorEstimate::soft) {
    const Tensor probs = softmax(first.logits);
    std::vector<double> mean(model.class_count, 0.0);
    for (std::size_t i = 0; i < probs.dim(0); ++i)
      for (std::size_t c = 0; c < model.class_count; ++c) mean[c] += probs[i * model.class_count + c];
    estimated = ClassPrior::from_weights(std::move(mean));
  } else {
    estimated = ClassPrior::from_labels(first.predictions, model.class_count);
  }

  auto second = hybrid_forward(model, batch, table, estimated, options);
  HybridTtnResult out;
  out.predictions = std::move(second.predictions);
  out.first_pass_predictions = std::move(first.predictions);
  out.final_prior = std::move(estimated);
  out.first_plan = std::move(first.plan);
  out.plan = std::move(second.plan);
  out.logits = std::move(second.logits);
  return out;
}

std::vector<int> ttn_predict(const ModelCheckpoint& model, const Tensor& batch) {
  require_batch(batch);
  return argmax_rows(forward(model, batch, BatchMode{}).logits);
}

std::vector<int> source_predict(const ModelCheckpoint& model, const Tensor& batch) {
  return argmax_rows(forward(model, batch, SourceMode{}).logits);
}

std::vector<int> layer_limited_ttn(const ModelCheckpoint& model, const Tensor& batch, std::size_t up_to) {
  require_batch(batch);
  return argmax_rows(forward(model, batch, make_layer_limited_mode(model, up_to)).logits);
}

HybridResult hybrid_random_scores(const ModelCheckpoint& model, const Tensor& batch, std::uint64_t seed,
                                  const AdaptOptions& options) {
  require_batch(batch);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto channels = model.bn_channel_counts();
  // The scores ignore the class prior, so a pseudolabel second pass would
  // reproduce the first one exactly; a single pass is returned.
  return scheduled_hybrid_pass(model, batch, options, [&](std::size_t k) {
    std::vector<double> scores(channels[k]);
    for (auto& s : scores) s = unit(rng);
    return scores;
  });
}

std::vector<int> hybrid_with_prior(const ModelCheckpoint& model, const Tensor& batch, const ScoreTable& table,
                                   const ClassPrior& prior, const AdaptOptions& options) {
  return hybrid_forward(model, batch, table, prior, options).predictions;
}

std::vector<std::vector<double>> channel_sensitivity_ranking(const ModelCheckpoint& model, const Tensor& batch) {
  require_batch(batch);
  std::vector<ChannelMask> masks;
  for (auto f : model.bn_channel_counts()) masks.push_back(ChannelMask::all_zeros(f));
  const auto out = forward(model, batch, make_hybrid_mode(model, std::move(masks)));
  std::vector<std::vector<double>> distances;
  for (std::size_t k = 0; k < out.batch_stats.size(); ++k) {
    const auto source = source_channel_stats(model.bn_source_stats[k], model.epsilon);
    const auto& target = out.batch_stats[k];
    std::vector<double> d(target.size());
    for (std::size_t f = 0; f < d.size(); ++f)
      d[f] = wasserstein2(source.mu[f], source.sigma[f], target.mu[f], target.sigma[f]);
    distances.push_back(std::move(d));
  }
  return distances;
}

std::vector<std::size_t> top_fraction_indices(std::span<const double> values, double fraction) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorKind::invalid_argument, "fraction must be in (0,1]");
  const auto count = std::min(values.size(),
                              static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(values.size()) - 1e-9)));
  auto order = ranked_indices(values);
  order.resize(std::max<std::size_t>(count, values.empty() ? 0 : 1));
  return order;
}

std::vector<double> top_fraction_overlap(const std::vector<std::vector<double>>& rank_a,
                                         const std::vector<std::vector<double>>& rank_b, double fraction) {
  require(rank_a.size() == rank_b.size(), ErrorKind::shape_mismatch, "rankings have different layer counts");
  std::vector<double> overlap;
  for (std::size_t k = 0; k < rank_a.size(); ++k) {
    require(rank_a[k].size() == rank_b[k].size() && !rank_a[k].empty(), ErrorKind::shape_mismatch,
            "rankings differ in channel count at layer " + std::to_string(k));
    auto top_a = top_fraction_indices(rank_a[k], fraction);
    auto top_b = top_fraction_indices(rank_b[k], fraction);
    std::sort(top_a.begin(), top_a.end());
    std::sort(top_b.begin(), top_b.end());
    std::vector<std::size_t> common;
    std::set_intersection(top_a.begin(), top_a.end(), top_b.begin(), top_b.end(), std::back_inserter(common));
    overlap.push_back(static_cast<double>(common.size()) / static_cast<double>(top_a.size()));
  }
  return overlap;
}

std::string MethodId::name() const {
  switch (kind) {
    case MethodKind::source: return "source";
    case MethodKind::ttn: return "ttn";
    case MethodKind::hybrid_ttn: return "hybrid_ttn";
    case MethodKind::hybrid_uniform: return "hybrid_uniform";
    case MethodKind::hybrid_oracle: return "hybrid_oracle";
    case MethodKind::hybrid_random_scores: return "hybrid_random";
    case MethodKind::layer_limited_ttn: return "layer_limited:" + std::to_string(up_to);
  }
  return "?";
}

MethodId MethodId::parse(std::string_view name) {
  constexpr std::string_view limited = "layer_limited:";
  if (name.substr(0, limited.size()) == limited) {
    const std::string digits(name.substr(limited.size()));
    require(!digits.empty() && std::all_of(digits.begin(), digits.end(), [](char ch) { return ch >= '0' && ch <= '9'; }),
            ErrorKind::invalid_argument, "bad layer limit in '" + std::string(name) + "'");
    return {MethodKind::layer_limited_ttn, static_cast<std::size_t>(std::stoull(digits))};
  }
  for (auto kind : {MethodKind::source, MethodKind::ttn, MethodKind::hybrid_ttn, MethodKind::hybrid_uniform,
                    MethodKind::hybrid_oracle, MethodKind::hybrid_random_scores}) {
    const MethodId id{kind, 0};
    if (id.name() == name) return id;
  }
  fail(ErrorKind::invalid_argument, "unknown method '" + std::string(name) + "'");
}

std::vector<int> run_method(const ModelCheckpoint& model, const Tensor& batch, const MethodId& method,
                            const MethodContext& context) {
  auto need_table = [&]() -> const ScoreTable& {
    require(context.table != nullptr, ErrorKind::invalid_argument, method.name() + " needs a score table");
    return *context.table;
  };
  switch (method.kind) {
    case MethodKind::source: return source_predict(model, batch);
    case MethodKind::ttn: return ttn_predict(model, batch);
    case MethodKind::hybrid_ttn: return hybrid_ttn_predict(model, batch, need_table(), context.options).predictions;
    case MethodKind::hybrid_uniform:
      return hybrid_with_prior(model, batch, need_table(), ClassPrior::uniform(model.class_count), context.options);
    case MethodKind::hybrid_oracle:
      require(context.true_labels.size() == batch.dim(0), ErrorKind::invalid_argument, "oracle prior needs the batch labels");
      return hybrid_with_prior(model, batch, need_table(), ClassPrior::from_labels(context.true_labels, model.class_count),
                               context.options);
    case MethodKind::hybrid_random_scores: return hybrid_random_scores(model, batch, context.seed, context.options).predictions;
    case MethodKind::layer_limited_ttn: return layer_limited_ttn(model, batch, method.up_to);
  }
  return {};
}

}  // namespace ttnlab
