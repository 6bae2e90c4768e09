#include "ttnlab/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "container.hpp"
#include "ttnlab/checkpoint.hpp"
#include "ttnlab/error.hpp"
#include "ttnlab/network.hpp"

namespace ttnlab {

double wasserstein2(double mu_s, double sigma_s, double mu_t, double sigma_t) {
  const double dm = mu_s - mu_t;
  const double ds = sigma_s - sigma_t;
  return dm * dm + ds * ds;
}

ScoreTable::ScoreTable(std::size_t class_count, std::vector<std::size_t> channel_counts, std::uint64_t checkpoint_digest)
    : class_count_(class_count), channel_counts_(std::move(channel_counts)), digest_(checkpoint_digest) {
  layer_offsets_.reserve(channel_counts_.size());
  for (auto f : channel_counts_) {
    layer_offsets_.push_back(per_class_);
    per_class_ += f;
  }
  sample_counts_.assign(class_count_, 0);
  scores_.assign(class_count_ * per_class_, 0.0f);
}

std::span<float> ScoreTable::row(std::size_t c, std::size_t k) {
  require(c < class_count_ && k < channel_counts_.size(), ErrorKind::invalid_argument, "score table index out of range");
  return {scores_.data() + c * per_class_ + layer_offsets_[k], channel_counts_[k]};
}

std::span<const float> ScoreTable::row(std::size_t c, std::size_t k) const {
  require(c < class_count_ && k < channel_counts_.size(), ErrorKind::invalid_argument, "score table index out of range");
  return {scores_.data() + c * per_class_ + layer_offsets_[k], channel_counts_[k]};
}

ScoreTable compute_score_table(const ModelCheckpoint& model, const LabeledDataset& source_data,
                               const ScoreOptions& options) {
  require(options.per_class_cap >= 2, ErrorKind::invalid_argument, "per-class cap must be >= 2");
  model.validate();
  source_data.validate(false);
  require(source_data.class_count == model.class_count, ErrorKind::invalid_argument,
          "dataset has " + std::to_string(source_data.class_count) + " classes, model " + std::to_string(model.class_count));
  const auto pools = source_data.class_indices();
  for (std::size_t c = 0; c < pools.size(); ++c)
    require(pools[c].size() >= 2, ErrorKind::degenerate_batch,
            "class " + std::to_string(c) + " has " + std::to_string(pools[c].size()) + " samples, need >= 2");

  std::vector<ChannelStats> source;
  for (const auto& s : model.bn_source_stats) source.push_back(source_channel_stats(s, model.epsilon));

  ScoreTable table(model.class_count, model.bn_channel_counts(), checkpoint_digest(model));
  for (std::size_t c = 0; c < pools.size(); ++c) {
    std::vector<std::size_t> rows = pools[c];
    if (rows.size() > options.per_class_cap) {
      std::mt19937_64 rng(options.seed + 0x9E3779B97F4A7C15ULL * (c + 1));
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(options.per_class_cap);
      std::sort(rows.begin(), rows.end());
    }
    table.class_sample_counts()[c] = rows.size();
    const Tensor batch = source_data.images.gather(rows);

    std::vector<ChannelStats> target;
    if (options.propagation == Propagation::batch) {
      target = forward(model, batch, BatchMode{}).batch_stats;
    } else {
      // All-zero masks normalize with source stats while still reporting the
      // batch statistics of every BN input.
      std::vector<ChannelMask> masks;
      for (auto f : model.bn_channel_counts()) masks.push_back(ChannelMask::all_zeros(f));
      target = forward(model, batch, make_hybrid_mode(model, std::move(masks))).batch_stats;
    }
    for (std::size_t k = 0; k < target.size(); ++k) {
      auto out = table.row(c, k);
      for (std::size_t f = 0; f < out.size(); ++f)
        out[f] = static_cast<float>(wasserstein2(source[k].mu[f], source[k].sigma[f], target[k].mu[f], target[k].sigma[f]));
    }
  }
  return table;
}

void check_table_matches(const ScoreTable& table, const ModelCheckpoint& model) {
  const auto digest = checkpoint_digest(model);
  require(table.checkpoint_digest() == digest && table.class_count() == model.class_count &&
              table.channel_counts() == model.bn_channel_counts(),
          ErrorKind::table_model_mismatch,
          "score table was computed for checkpoint digest " + std::to_string(table.checkpoint_digest()) +
              ", model digest is " + std::to_string(digest));
}

void save_score_table(const ScoreTable& table, const std::filesystem::path& path) {
  require(table.class_count() > 0 && table.layer_count() > 0, ErrorKind::invalid_argument, "refusing to save an empty score table");
  nlohmann::json header = {{"content", "score_table"},
                           {"class_count", table.class_count()},
                           {"bn_layer_count", table.layer_count()},
                           {"channel_counts", table.channel_counts()},
                           {"class_sample_counts", table.class_sample_counts()},
                           {"checkpoint_digest", table.checkpoint_digest()}};
  container::write_file(path, container::encode(kScoreTableMagic, std::move(header),
                                                {{"scores", {table.values().size()}, table.values()}}));
}

ScoreTable load_score_table(const std::filesystem::path& path, const ModelCheckpoint* model) {
  const auto decoded = container::decode(kScoreTableMagic, container::read_file(path));
  const auto& h = decoded.header;
  ScoreTable table;
  try {
    require(h.at("content") == "score_table", ErrorKind::bad_format, "container does not hold a score table");
    auto channels = h.at("channel_counts").get<std::vector<std::size_t>>();
    require(h.at("bn_layer_count").get<std::size_t>() == channels.size(), ErrorKind::bad_format,
            "BN layer count disagrees with channel list");
    table = ScoreTable(h.at("class_count").get<std::size_t>(), std::move(channels), h.at("checkpoint_digest").get<std::uint64_t>());
    table.class_sample_counts() = h.at("class_sample_counts").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::bad_format, std::string("malformed score table header: ") + e.what());
  }
  const auto& scores = decoded.array("scores").data;
  require(scores.size() == table.values().size(), ErrorKind::truncated,
          "score payload has " + std::to_string(scores.size()) + " values, header implies " +
              std::to_string(table.values().size()));
  require(table.class_sample_counts().size() == table.class_count(), ErrorKind::bad_format, "per-class counts length mismatch");
  table.values() = scores;
  if (model) check_table_matches(table, *model);
  return table;
}

}  // namespace ttnlab
