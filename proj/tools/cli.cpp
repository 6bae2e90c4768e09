#include "cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <ostream>

#include "ttnlab/adaptation.hpp"
#include "ttnlab/checkpoint.hpp"
#include "ttnlab/config.hpp"
#include "ttnlab/error.hpp"
#include "ttnlab/experiment.hpp"
#include "ttnlab/scoring.hpp"
#include "ttnlab/train.hpp"

#ifndef TTNLAB_DEFAULT_CONFIG
#define TTNLAB_DEFAULT_CONFIG "configs/default.conf"
#endif

namespace ttnlab {
namespace {

// Raised for semantic usage mistakes CLI11 cannot see (exit status 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_path = TTNLAB_DEFAULT_CONFIG;
  std::uint64_t seed = 0;
  CLI::Option* seed_option = nullptr;

  bool has_seed() const { return seed_option && seed_option->count() > 0; }
};

void add_common(CLI::App* sub, CommonOptions& common) {
  sub->add_option("--config", common.config_path, "Configuration file")->capture_default_str();
  common.seed_option = sub->add_option("--seed", common.seed, "Override the subcommand's base seed");
}

std::string fmt(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.6g", value);
  return buffer;
}

// Writes to `path`, or to `out` when the path is "-".
template <class Write>
void write_text(const std::string& path, std::ostream& out, Write write) {
  if (path == "-") {
    write(out);
    return;
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  require(file.good(), ErrorKind::io, "cannot write " + path);
  write(file);
  file.flush();
  require(file.good(), ErrorKind::io, "failed writing " + path);
}

std::string corruption_label(const std::optional<CorruptionSpec>& c) {
  return c ? std::string(to_string(c->kind)) + ":" + std::to_string(c->severity) : "none";
}

std::vector<std::uint64_t> seed_range(std::uint64_t base, std::size_t count) {
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = base + i;
  return seeds;
}

void print_aggregate(std::ostream& out, const std::vector<AggregateRow>& rows) {
  out << "method,corruption_kind,severity,shift_kind,shift_param,repeats,mean_accuracy,std_accuracy,mean_delta,std_delta\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.corruption_kind << ',' << r.severity << ',' << r.shift_kind << ',' << r.shift_param
        << ',' << r.repeats << ',' << fmt(r.mean_accuracy) << ',' << fmt(r.std_accuracy) << ','
        << fmt(r.mean_delta) << ',' << fmt(r.std_delta) << '\n';
  }
}

nlohmann::ordered_json plan_json(const AdaptationPlan& plan) {
  nlohmann::ordered_json j;
  j["prior"] = plan.prior.p;
  j["layers"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < plan.masks.size(); ++k) {
    std::string bits;
    for (auto b : plan.masks[k].bits) bits += b ? '1' : '0';
    nlohmann::ordered_json layer;
    layer["bn_layer"] = k + 1;
    layer["fraction"] = plan.fractions.at(k);
    layer["channels"] = plan.masks[k].size();
    layer["frozen"] = plan.masks[k].frozen_count();
    // One character per channel: 1 = batch statistics, 0 = source statistics.
    layer["mask"] = bits;
    j["layers"].push_back(std::move(layer));
  }
  return j;
}

int run_train(const CommonOptions& common, const std::string& out_path, std::ostream& out) {
  LabConfig config = load_config(common.config_path);
  if (common.has_seed()) {
    config.train.seed = common.seed;
    config.model.init_seed = common.seed;
  }
  const LabeledDataset train_data = load_train_data(config.data);
  train_data.validate(true);
  out << "training on " << train_data.size() << " samples, " << config.data.classes << " classes\n";
  ModelCheckpoint model = train(train_data, configured_architecture(config), config.model.init_seed, config.train,
                                [&](std::size_t epoch, double loss) {
                                  out << "epoch " << epoch + 1 << " loss " << fmt(loss) << '\n';
                                });
  out << "train accuracy " << fmt(evaluate_accuracy(model, train_data)) << '\n';
  out << "test accuracy " << fmt(evaluate_accuracy(model, load_test_data(config.data))) << '\n';
  save_checkpoint(model, out_path);
  out << "wrote " << out_path << " (digest " << std::hex << checkpoint_digest(model) << std::dec << ")\n";
  return 0;
}

int run_score(const CommonOptions& common, const std::string& model_path, const std::string& out_path,
              std::ostream& out) {
  LabConfig config = load_config(common.config_path);
  if (common.has_seed()) config.score.seed = common.seed;
  const ModelCheckpoint model = load_checkpoint(model_path);
  const ScoreTable table = compute_score_table(model, load_train_data(config.data), config.score);
  save_score_table(table, out_path);
  out << "wrote " << out_path << " (" << table.class_count() << " classes, " << model.bn_layer_count()
      << " BN layers)\n";
  return 0;
}

struct AdaptArgs {
  std::string model_path = "model.ttn";
  std::string table_path = "scores.ttn";
  std::string method = "hybrid_ttn";
  std::string shift = "nclass:1";
  std::string corruption = "none";
  std::size_t batch_size = 0;
  std::string mask_dump;
};

int run_adapt(const CommonOptions& common, const AdaptArgs& args, std::ostream& out) {
  const LabConfig config = load_config(common.config_path);
  MethodId method;
  try {
    method = MethodId::parse(args.method == "hybrid" ? "hybrid_ttn" : args.method);
  } catch (const Error& e) {
    throw UsageError("--method: " + e.detail());
  }
  const bool hybrid = method.kind == MethodKind::hybrid_ttn || method.kind == MethodKind::hybrid_uniform ||
                      method.kind == MethodKind::hybrid_oracle || method.kind == MethodKind::hybrid_random_scores;
  if (!args.mask_dump.empty() && !hybrid) throw UsageError("--mask-dump needs a hybrid method");

  const ModelCheckpoint model = load_checkpoint(args.model_path);
  std::optional<ScoreTable> table;
  if (method.kind != MethodKind::source && method.kind != MethodKind::ttn &&
      method.kind != MethodKind::layer_limited_ttn && method.kind != MethodKind::hybrid_random_scores) {
    table = load_score_table(args.table_path, &model);
  }
  const LabeledDataset test_data = load_test_data(config.data);
  ScenarioSpec scenario{parse_corruption(args.corruption), parse_label_shift(args.shift),
                        args.batch_size ? args.batch_size : config.grid.batch_size, {}};
  const std::uint64_t seed = common.has_seed() ? common.seed : config.grid.seed;
  const LabeledBatch batch = make_scenario_batch(test_data, scenario, seed, config.corruption);

  std::vector<int> predictions;
  nlohmann::ordered_json dump;
  dump["method"] = method.name();
  dump["seed"] = seed;
  dump["passes"] = nlohmann::ordered_json::array();
  switch (method.kind) {
    case MethodKind::hybrid_ttn: {
      auto result = hybrid_ttn_predict(model, batch.images, *table, config.adapt);
      dump["passes"].push_back(plan_json(result.first_plan));
      dump["passes"].push_back(plan_json(result.plan));
      predictions = std::move(result.predictions);
      break;
    }
    case MethodKind::hybrid_uniform:
    case MethodKind::hybrid_oracle: {
      const ClassPrior prior = method.kind == MethodKind::hybrid_uniform
                                   ? ClassPrior::uniform(model.class_count)
                                   : ClassPrior::from_labels(batch.labels, model.class_count);
      auto result = hybrid_forward(model, batch.images, *table, prior, config.adapt);
      dump["passes"].push_back(plan_json(result.plan));
      predictions = std::move(result.predictions);
      break;
    }
    case MethodKind::hybrid_random_scores: {
      auto result = hybrid_random_scores(model, batch.images, seed, config.adapt);
      dump["passes"].push_back(plan_json(result.plan));
      predictions = std::move(result.predictions);
      break;
    }
    default: {
      MethodContext context{table ? &*table : nullptr, batch.labels, seed, config.adapt};
      predictions = run_method(model, batch.images, method, context);
    }
  }

  const auto summary = score_predictions(predictions, batch.labels, model.class_count);
  const auto source = score_predictions(source_predict(model, batch.images), batch.labels, model.class_count);
  out << "method " << method.name() << " corruption " << corruption_label(scenario.corruption) << " shift "
      << args.shift << " seed " << seed << '\n';
  out << "accuracy " << fmt(summary.overall) << " source " << fmt(source.overall) << " delta "
      << fmt(summary.overall - source.overall) << '\n';
  if (!args.mask_dump.empty()) {
    write_text(args.mask_dump, out, [&](std::ostream& s) { s << dump.dump(2) << '\n'; });
    if (args.mask_dump != "-") out << "wrote masks to " << args.mask_dump << '\n';
  }
  return 0;
}

int run_eval_grid(const CommonOptions& common, const std::string& model_path, const std::string& table_path,
                  const std::string& out_path, std::ostream& out) {
  LabConfig config = load_config(common.config_path);
  if (common.has_seed()) config.grid.seed = common.seed;
  const ModelCheckpoint model = load_checkpoint(model_path);
  const ScoreTable table = load_score_table(table_path, &model);
  const LabeledDataset test_data = load_test_data(config.data);
  GridInputs inputs{&model, &table, &test_data, &config.corruption, config.adapt};
  const EvalReport report = run_grid(inputs, config.grid.scenarios(), config.grid.methods);
  const std::filesystem::path path(out_path);
  emit_report(report, path.extension() == ".json" ? ReportFormat::json : ReportFormat::csv, path);
  print_aggregate(out, aggregate(report));
  out << "wrote " << report.rows.size() << " rows to " << out_path << '\n';
  return 0;
}

int run_analyze_layers(const CommonOptions& common, const std::string& model_path, const std::string& out_path,
                       std::ostream& out) {
  const LabConfig config = load_config(common.config_path);
  const ModelCheckpoint model = load_checkpoint(model_path);
  const LabeledDataset test_data = load_test_data(config.data);
  std::vector<MethodId> methods;
  for (std::size_t k = 0; k <= model.bn_layer_count(); ++k) methods.push_back({MethodKind::layer_limited_ttn, k});
  std::vector<ScenarioSpec> scenarios;
  const auto seeds = seed_range(common.has_seed() ? common.seed : config.grid.seed, config.analysis.repeats);
  for (const auto& corruption : config.analysis.layer_corruptions) {
    for (const auto& shift : config.analysis.layer_shifts) {
      scenarios.push_back({corruption, shift, config.grid.batch_size, seeds});
    }
  }
  GridInputs inputs{&model, nullptr, &test_data, &config.corruption, config.adapt};
  const auto rows = aggregate(run_grid(inputs, scenarios, methods));
  write_text(out_path, out, [&](std::ostream& s) { print_aggregate(s, rows); });
  return 0;
}

int run_analyze_overlap(const CommonOptions& common, const std::string& model_path, const std::string& out_path,
                        std::ostream& out) {
  const LabConfig config = load_config(common.config_path);
  const ModelCheckpoint model = load_checkpoint(model_path);
  const LabeledDataset test_data = load_test_data(config.data);
  const auto seeds = seed_range(common.has_seed() ? common.seed : config.grid.seed, config.analysis.repeats);
  const auto overlap = overlap_profile(model, test_data, config.analysis.overlap_corruption, config.corruption,
                                       config.analysis.overlap_fraction, config.grid.batch_size, seeds);
  write_text(out_path, out, [&](std::ostream& s) {
    s << "bn_layer,mean_overlap\n";
    for (std::size_t k = 0; k < overlap.size(); ++k) s << k + 1 << ',' << fmt(overlap[k]) << '\n';
  });
  return 0;
}

int run_rank(const std::string& report_path, std::ostream& out) {
  const RankTable table = median_rank(read_report(report_path));
  out << "method,median_rank\n";
  for (std::size_t m = 0; m < table.methods.size(); ++m) {
    out << table.methods[m] << ',' << fmt(table.median_rank[m]) << '\n';
  }
  out << "scenarios " << table.scenario_count << '\n';
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid test-time BatchNorm lab"};
  app.name("ttnlab");
  app.require_subcommand(1);

  CommonOptions common;
  std::string model_path = "model.ttn", table_path = "scores.ttn", out_path, report_path;
  AdaptArgs adapt;

  auto* train_cmd = app.add_subcommand("train", "Train the source model and write a checkpoint");
  add_common(train_cmd, common);
  train_cmd->add_option("--out", out_path, "Checkpoint to write")->default_str("model.ttn");

  auto* score_cmd = app.add_subcommand("score", "Compute the per-class channel score table");
  add_common(score_cmd, common);
  score_cmd->add_option("--model", model_path, "Checkpoint")->capture_default_str();
  score_cmd->add_option("--out", out_path, "Score table to write")->default_str("scores.ttn");

  auto* adapt_cmd = app.add_subcommand("adapt", "Adapt one test batch and report its accuracy");
  add_common(adapt_cmd, common);
  adapt_cmd->add_option("--model", adapt.model_path, "Checkpoint")->capture_default_str();
  adapt_cmd->add_option("--table", adapt.table_path, "Score table")->capture_default_str();
  adapt_cmd->add_option("--method", adapt.method,
                        "source, ttn, hybrid (= hybrid_ttn), hybrid_uniform, hybrid_oracle, hybrid_random, "
                        "layer_limited:<k>")
      ->capture_default_str();
  adapt_cmd->add_option("--shift", adapt.shift, "nclass:<n>, dirichlet:<alpha> or explicit:<c0;c1;...>")
      ->capture_default_str();
  adapt_cmd->add_option("--corruption", adapt.corruption, "none or <kind>:<severity>")->capture_default_str();
  adapt_cmd->add_option("--batch-size", adapt.batch_size, "Batch size (default: [grid] batch_size)");
  adapt_cmd->add_option("--mask-dump", adapt.mask_dump, "Write the channel masks as JSON ('-' for stdout)");

  auto* grid_cmd = app.add_subcommand("eval-grid", "Evaluate the configured method x scenario x seed grid");
  add_common(grid_cmd, common);
  grid_cmd->add_option("--model", model_path, "Checkpoint")->capture_default_str();
  grid_cmd->add_option("--table", table_path, "Score table")->capture_default_str();
  grid_cmd->add_option("--out", out_path, "Report to write (.csv or .json)")->default_str("report.csv");

  auto* layers_cmd = app.add_subcommand("analyze-layers", "Sweep how many leading BN layers adapt");
  add_common(layers_cmd, common);
  layers_cmd->add_option("--model", model_path, "Checkpoint")->capture_default_str();
  layers_cmd->add_option("--out", out_path, "CSV to write ('-' for stdout)")->default_str("-");

  auto* overlap_cmd = app.add_subcommand("analyze-overlap", "Top channel overlap, single-class vs all-class batches");
  add_common(overlap_cmd, common);
  overlap_cmd->add_option("--model", model_path, "Checkpoint")->capture_default_str();
  overlap_cmd->add_option("--out", out_path, "CSV to write ('-' for stdout)")->default_str("-");

  auto* rank_cmd = app.add_subcommand("rank", "Median rank of each method across the scenarios of a report");
  add_common(rank_cmd, common);
  rank_cmd->add_option("--report", report_path, "Report (.csv or .json)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  auto out_or = [&](const char* fallback) { return out_path.empty() ? std::string(fallback) : out_path; };
  try {
    if (*train_cmd) return run_train(common, out_or("model.ttn"), out);
    if (*score_cmd) return run_score(common, model_path, out_or("scores.ttn"), out);
    if (*adapt_cmd) return run_adapt(common, adapt, out);
    if (*grid_cmd) return run_eval_grid(common, model_path, table_path, out_or("report.csv"), out);
    if (*layers_cmd) return run_analyze_layers(common, model_path, out_or("-"), out);
    if (*overlap_cmd) return run_analyze_overlap(common, model_path, out_or("-"), out);
    if (*rank_cmd) return run_rank(report_path, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace ttnlab
