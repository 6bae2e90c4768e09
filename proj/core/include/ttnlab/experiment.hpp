#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ttnlab/adaptation.hpp"
#include "ttnlab/data.hpp"
#include "ttnlab/model.hpp"
#include "ttnlab/scoring.hpp"

namespace ttnlab {

/// One grid axis point: optional corruption, a label-shift construction and
/// the seeds it is repeated over. The seed stored inside `label_shift` is
/// replaced by each repeat seed.
struct ScenarioSpec {
  std::optional<CorruptionSpec> corruption;
  LabelShiftSpec label_shift = NClassShift{};
  std::size_t batch_size = 200;
  std::vector<std::uint64_t> seeds;
};

/// "nclass:3", "dirichlet:0.1", "explicit:10;0;5"
LabelShiftSpec parse_label_shift(std::string_view text);
/// "none" or "gaussian_noise:5"
std::optional<CorruptionSpec> parse_corruption(std::string_view text);
std::string shift_kind_name(const LabelShiftSpec& spec);
std::string shift_param_text(const LabelShiftSpec& spec);

/// One (method, scenario, seed) cell.
struct EvalRow {
  std::string method;
  std::string corruption_kind = "none";
  int severity = 0;
  std::string shift_kind;
  std::string shift_param;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double delta_vs_source = 0.0;
  std::vector<double> per_class_accuracy;  // NaN for classes absent from the batch

  bool operator==(const EvalRow&) const = default;
};

struct EvalReport {
  std::size_t class_count = 0;
  std::vector<EvalRow> rows;
};

struct GridInputs {
  const ModelCheckpoint* model = nullptr;
  const ScoreTable* table = nullptr;
  const LabeledDataset* data = nullptr;  // test pool the batches are drawn from
  const CorruptionTables* corruption_tables = nullptr;
  AdaptOptions options;
};

/// Evaluates every (method, scenario, seed) cell; rows are ordered scenario,
/// seed, method. Source always runs (once per scenario-seed) as the delta
/// baseline and is reported only if listed in `methods`.
EvalReport run_grid(const GridInputs& inputs, const std::vector<ScenarioSpec>& scenarios,
                    const std::vector<MethodId>& methods);

/// Builds a batch for one scenario repeat, corrupted when requested.
LabeledBatch make_scenario_batch(const LabeledDataset& data, const ScenarioSpec& scenario, std::uint64_t seed,
                                 const CorruptionTables& tables);

struct AccuracySummary {
  double overall = 0.0;
  std::vector<double> per_class;
};
AccuracySummary score_predictions(std::span<const int> predictions, std::span<const int> labels, std::size_t class_count);

struct AggregateRow {
  std::string method;
  std::string corruption_kind;
  int severity = 0;
  std::string shift_kind;
  std::string shift_param;
  std::size_t repeats = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_delta = 0.0;
  double std_delta = 0.0;
};

/// Mean and sample standard deviation over seeds per (method, scenario).
std::vector<AggregateRow> aggregate(const EvalReport& report);

/// Per BN layer, mean top-`fraction` channel overlap between the sensitivity
/// rankings of a single-class batch and an all-class batch, averaged over
/// `seeds`. Both batches get the same corruption.
std::vector<double> overlap_profile(const ModelCheckpoint& model, const LabeledDataset& data,
                                    const std::optional<CorruptionSpec>& corruption, const CorruptionTables& tables,
                                    double fraction, std::size_t batch_size, const std::vector<std::uint64_t>& seeds);

struct RankTable {
  std::vector<std::string> methods;
  std::vector<double> median_rank;
  std::size_t scenario_count = 0;
};

/// Ranks methods inside each scenario by mean accuracy over seeds (1 = best,
/// ties share the average rank) and reports each method's median rank.
/// Fails with incomplete_report naming the first missing cell.
RankTable median_rank(const EvalReport& report);

enum class ReportFormat { csv, json };

/// CSV columns: method, corruption_kind, severity, shift_kind, shift_param,
/// seed, accuracy, delta_vs_source, per_class_acc_0..C-1. Floats carry six
/// significant digits; absent classes are empty (CSV) or null (JSON).
std::string format_report(const EvalReport& report, ReportFormat format);
void emit_report(const EvalReport& report, ReportFormat format, const std::filesystem::path& path);
EvalReport parse_report(std::string_view text, ReportFormat format);
/// Format chosen by extension (.json, otherwise CSV).
EvalReport read_report(const std::filesystem::path& path);

}  // namespace ttnlab
