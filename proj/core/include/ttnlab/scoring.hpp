#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ttnlab/data.hpp"
#include "ttnlab/model.hpp"

namespace ttnlab {

/// Squared 2-Wasserstein distance between N(mu_s, sigma_s^2) and
/// N(mu_t, sigma_t^2): (mu_s - mu_t)^2 + (sigma_s - sigma_t)^2.
double wasserstein2(double mu_s, double sigma_s, double mu_t, double sigma_t);

/// Per-class, per-BN-layer, per-channel sensitivity scores, stored flat in
/// [class][layer][channel] order.
class ScoreTable {
 public:
  ScoreTable() = default;
  ScoreTable(std::size_t class_count, std::vector<std::size_t> channel_counts, std::uint64_t checkpoint_digest);

  std::size_t class_count() const noexcept { return class_count_; }
  std::size_t layer_count() const noexcept { return channel_counts_.size(); }
  const std::vector<std::size_t>& channel_counts() const noexcept { return channel_counts_; }
  std::uint64_t checkpoint_digest() const noexcept { return digest_; }
  void set_checkpoint_digest(std::uint64_t digest) noexcept { digest_ = digest; }

  /// Number of samples each class row was computed from.
  std::vector<std::size_t>& class_sample_counts() noexcept { return sample_counts_; }
  const std::vector<std::size_t>& class_sample_counts() const noexcept { return sample_counts_; }

  std::span<float> row(std::size_t c, std::size_t k);
  std::span<const float> row(std::size_t c, std::size_t k) const;
  const std::vector<float>& values() const noexcept { return scores_; }
  std::vector<float>& values() noexcept { return scores_; }

  bool operator==(const ScoreTable&) const = default;

 private:
  std::size_t class_count_ = 0;
  std::vector<std::size_t> channel_counts_;
  std::vector<std::size_t> layer_offsets_;
  std::vector<std::size_t> sample_counts_;
  std::uint64_t digest_ = 0;
  std::vector<float> scores_;
  std::size_t per_class_ = 0;
};

/// Which statistics normalize each BN layer while a class batch is propagated.
enum class Propagation {
  source,  // deployed model: normalize with source stats, only record batch stats
  batch,   // normalize every layer with the class batch's own stats
};

struct ScoreOptions {
  std::size_t per_class_cap = 256;
  std::uint64_t seed = 0;
  Propagation propagation = Propagation::source;
};

/// Runs each class's samples (up to the cap, seeded subsample) through the
/// model and scores every BN channel by the W2^2 distance between the source
/// statistics and the class batch statistics of its input.
ScoreTable compute_score_table(const ModelCheckpoint& model, const LabeledDataset& source_data,
                               const ScoreOptions& options = {});

inline constexpr char kScoreTableMagic[] = "TTNSC001";

void save_score_table(const ScoreTable& table, const std::filesystem::path& path);
/// When `model` is given, fails with table_model_mismatch unless the stored
/// digest matches it.
ScoreTable load_score_table(const std::filesystem::path& path, const ModelCheckpoint* model = nullptr);

/// Fails with table_model_mismatch when the table was not computed from `model`.
void check_table_matches(const ScoreTable& table, const ModelCheckpoint& model);

}  // namespace ttnlab
