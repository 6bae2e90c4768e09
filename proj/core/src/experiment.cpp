#include "ttnlab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ttnlab/error.hpp"

namespace ttnlab {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double parse_double(std::string_view text, const std::string& what) {
  std::string s(text);
  char* end = nullptr;
  const double value = std::strtod(s.c_str(), &end);
  require(!s.empty() && end == s.c_str() + s.size(), ErrorKind::bad_format, what + ": bad number '" + s + "'");
  return value;
}

std::uint64_t parse_unsigned(std::string_view text, const std::string& what) {
  std::string s(text);
  require(!s.empty() && s.find_first_not_of("0123456789") == std::string::npos, ErrorKind::bad_format,
          what + ": bad integer '" + s + "'");
  return std::stoull(s);
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string cell_name(const EvalRow& row) {
  return "method=" + row.method + " corruption=" + row.corruption_kind + ":" + std::to_string(row.severity) +
         " shift=" + row.shift_kind + ":" + row.shift_param + " seed=" + std::to_string(row.seed);
}

std::string format_float(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.6g", value);
  return buffer;
}

// Value as it will read back from the six-digit text form.
double six_digits(double value) { return std::strtod(format_float(value).c_str(), nullptr); }

}  // namespace

LabelShiftSpec parse_label_shift(std::string_view text) {
  const auto colon = text.find(':');
  require(colon != std::string_view::npos, ErrorKind::invalid_argument,
          "label shift '" + std::string(text) + "' should look like nclass:<n>, dirichlet:<alpha> or explicit:<c0;c1;...>");
  const std::string_view kind = text.substr(0, colon);
  const std::string_view arg = text.substr(colon + 1);
  const std::string what = "label shift '" + std::string(text) + "'";
  try {
    if (kind == "nclass") {
      const auto n = parse_unsigned(arg, what);
      require(n >= 1, ErrorKind::invalid_argument, what + ": n must be at least 1");
      return NClassShift{n, 0};
    }
    if (kind == "dirichlet") {
      const double alpha = parse_double(arg, what);
      require(alpha > 0.0 && std::isfinite(alpha), ErrorKind::invalid_argument, what + ": alpha must be positive");
      return DirichletShift{alpha, 0};
    }
    if (kind == "explicit") {
      ExplicitShift shift;
      for (auto part : split(arg, ';')) shift.counts.push_back(parse_unsigned(part, what));
      return shift;
    }
  } catch (const Error& e) {
    fail(ErrorKind::invalid_argument, e.detail());
  }
  fail(ErrorKind::invalid_argument, what + ": unknown kind '" + std::string(kind) + "'");
}

std::optional<CorruptionSpec> parse_corruption(std::string_view text) {
  if (text == "none") return std::nullopt;
  const auto colon = text.find(':');
  require(colon != std::string_view::npos, ErrorKind::invalid_argument,
          "corruption '" + std::string(text) + "' should look like none or <kind>:<severity>");
  CorruptionSpec spec;
  spec.kind = corruption_kind_from_string(text.substr(0, colon));
  const std::string what = "corruption '" + std::string(text) + "'";
  std::uint64_t severity = 0;
  try {
    severity = parse_unsigned(text.substr(colon + 1), what);
  } catch (const Error& e) {
    fail(ErrorKind::invalid_argument, e.detail());
  }
  require(severity <= 5, ErrorKind::invalid_argument, what + ": severity must be 0..5");
  if (severity == 0) return std::nullopt;
  spec.severity = static_cast<int>(severity);
  return spec;
}

std::string shift_kind_name(const LabelShiftSpec& spec) {
  struct Visitor {
    std::string operator()(const NClassShift&) const { return "nclass"; }
    std::string operator()(const DirichletShift&) const { return "dirichlet"; }
    std::string operator()(const ExplicitShift&) const { return "explicit"; }
  };
  return std::visit(Visitor{}, spec);
}

std::string shift_param_text(const LabelShiftSpec& spec) {
  struct Visitor {
    std::string operator()(const NClassShift& s) const { return std::to_string(s.n); }
    std::string operator()(const DirichletShift& s) const { return format_float(s.alpha); }
    std::string operator()(const ExplicitShift& s) const {
      std::string out;
      for (std::size_t i = 0; i < s.counts.size(); ++i) out += (i ? ";" : "") + std::to_string(s.counts[i]);
      return out;
    }
  };
  return std::visit(Visitor{}, spec);
}

LabeledBatch make_scenario_batch(const LabeledDataset& data, const ScenarioSpec& scenario, std::uint64_t seed,
                                 const CorruptionTables& tables) {
  LabelShiftSpec shift = scenario.label_shift;
  std::visit([seed](auto& s) { s.seed = seed; }, shift);
  LabeledBatch batch = sample_label_shift(data, shift, scenario.batch_size);
  if (scenario.corruption && scenario.corruption->severity > 0) {
    batch.images = corrupt(batch.images, *scenario.corruption, tables, splitmix64(seed ^ 0xc0440b7ull));
  }
  return batch;
}

AccuracySummary score_predictions(std::span<const int> predictions, std::span<const int> labels,
                                  std::size_t class_count) {
  require(predictions.size() == labels.size() && !labels.empty(), ErrorKind::invalid_argument,
          "predictions and labels must be non-empty and equally long");
  std::vector<std::size_t> correct(class_count, 0), total(class_count, 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    require(y >= 0 && static_cast<std::size_t>(y) < class_count, ErrorKind::invalid_argument,
            "label " + std::to_string(y) + " out of range");
    ++total[y];
    if (predictions[i] == y) {
      ++correct[y];
      ++hits;
    }
  }
  AccuracySummary summary;
  summary.overall = static_cast<double>(hits) / static_cast<double>(labels.size());
  summary.per_class.resize(class_count);
  for (std::size_t c = 0; c < class_count; ++c) {
    summary.per_class[c] = total[c] ? static_cast<double>(correct[c]) / static_cast<double>(total[c]) : kNaN;
  }
  return summary;
}

EvalReport run_grid(const GridInputs& inputs, const std::vector<ScenarioSpec>& scenarios,
                    const std::vector<MethodId>& methods) {
  require(inputs.model && inputs.data && inputs.corruption_tables, ErrorKind::invalid_argument,
          "run_grid needs a model, a dataset and corruption tables");
  const ModelCheckpoint& model = *inputs.model;
  if (inputs.table) check_table_matches(*inputs.table, model);
  require(inputs.data->class_count == model.class_count, ErrorKind::invalid_argument,
          "dataset has " + std::to_string(inputs.data->class_count) + " classes, model " +
              std::to_string(model.class_count));

  EvalReport report;
  report.class_count = model.class_count;
  for (const auto& scenario : scenarios) {
    require(!scenario.seeds.empty(), ErrorKind::invalid_argument, "scenario needs at least one seed");
    for (const std::uint64_t seed : scenario.seeds) {
      EvalRow base;
      if (scenario.corruption && scenario.corruption->severity > 0) {
        base.corruption_kind = std::string(to_string(scenario.corruption->kind));
        base.severity = scenario.corruption->severity;
      }
      base.shift_kind = shift_kind_name(scenario.label_shift);
      base.shift_param = shift_param_text(scenario.label_shift);
      base.seed = seed;

      const LabeledBatch batch = make_scenario_batch(*inputs.data, scenario, seed, *inputs.corruption_tables);
      const AccuracySummary source =
          score_predictions(source_predict(model, batch.images), batch.labels, model.class_count);

      MethodContext context;
      context.table = inputs.table;
      context.true_labels = batch.labels;
      context.seed = seed;
      context.options = inputs.options;
      for (const auto& method : methods) {
        EvalRow row = base;
        row.method = method.name();
        AccuracySummary summary;
        if (method.kind == MethodKind::source) {
          summary = source;
        } else {
          try {
            summary = score_predictions(run_method(model, batch.images, method, context), batch.labels,
                                        model.class_count);
          } catch (const Error& e) {
            fail(e.kind(), cell_name(row) + ": " + e.detail());
          }
        }
        row.accuracy = summary.overall;
        row.delta_vs_source = summary.overall - source.overall;
        row.per_class_accuracy = std::move(summary.per_class);
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

std::vector<AggregateRow> aggregate(const EvalReport& report) {
  using Key = std::tuple<std::string, std::string, int, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<const EvalRow*>> groups;
  for (const auto& row : report.rows) {
    Key key{row.method, row.corruption_kind, row.severity, row.shift_kind, row.shift_param};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&row);
  }
  auto mean_std = [](const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
  };
  std::vector<AggregateRow> out;
  for (const auto& key : order) {
    const auto& rows = groups[key];
    std::vector<double> acc, delta;
    for (const auto* row : rows) {
      acc.push_back(row->accuracy);
      delta.push_back(row->delta_vs_source);
    }
    AggregateRow agg;
    std::tie(agg.method, agg.corruption_kind, agg.severity, agg.shift_kind, agg.shift_param) = key;
    agg.repeats = rows.size();
    std::tie(agg.mean_accuracy, agg.std_accuracy) = mean_std(acc);
    std::tie(agg.mean_delta, agg.std_delta) = mean_std(delta);
    out.push_back(std::move(agg));
  }
  return out;
}

std::vector<double> overlap_profile(const ModelCheckpoint& model, const LabeledDataset& data,
                                    const std::optional<CorruptionSpec>& corruption, const CorruptionTables& tables,
                                    double fraction, std::size_t batch_size, const std::vector<std::uint64_t>& seeds) {
  require(!seeds.empty(), ErrorKind::invalid_argument, "overlap profile needs at least one seed");
  std::vector<double> total(model.bn_layer_count(), 0.0);
  for (const std::uint64_t seed : seeds) {
    const ScenarioSpec single{corruption, NClassShift{1, 0}, batch_size, {}};
    const ScenarioSpec all{corruption, NClassShift{data.class_count, 0}, batch_size, {}};
    const auto a = channel_sensitivity_ranking(model, make_scenario_batch(data, single, seed, tables).images);
    const auto b = channel_sensitivity_ranking(model, make_scenario_batch(data, all, splitmix64(seed), tables).images);
    const auto overlap = top_fraction_overlap(a, b, fraction);
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += overlap[k];
  }
  for (double& t : total) t /= static_cast<double>(seeds.size());
  return total;
}

RankTable median_rank(const EvalReport& report) {
  using Scenario = std::tuple<std::string, int, std::string, std::string>;
  std::vector<std::string> methods;
  std::vector<Scenario> scenarios;
  std::map<std::pair<Scenario, std::string>, std::pair<double, std::size_t>> sums;
  for (const auto& row : report.rows) {
    if (std::find(methods.begin(), methods.end(), row.method) == methods.end()) methods.push_back(row.method);
    Scenario s{row.corruption_kind, row.severity, row.shift_kind, row.shift_param};
    if (std::find(scenarios.begin(), scenarios.end(), s) == scenarios.end()) scenarios.push_back(s);
    auto& [sum, n] = sums[{s, row.method}];
    sum += row.accuracy;
    ++n;
  }

  RankTable table;
  table.methods = methods;
  table.scenario_count = scenarios.size();
  std::vector<std::vector<double>> ranks(methods.size());
  for (const auto& s : scenarios) {
    std::vector<double> mean(methods.size());
    for (std::size_t m = 0; m < methods.size(); ++m) {
      auto it = sums.find({s, methods[m]});
      if (it == sums.end()) {
        fail(ErrorKind::incomplete_report, "no result for method=" + methods[m] + " corruption=" + std::get<0>(s) +
                                               ":" + std::to_string(std::get<1>(s)) + " shift=" + std::get<2>(s) +
                                               ":" + std::get<3>(s));
      }
      mean[m] = it->second.first / static_cast<double>(it->second.second);
    }
    for (std::size_t m = 0; m < methods.size(); ++m) {
      std::size_t better = 0, tied = 0;
      for (std::size_t o = 0; o < methods.size(); ++o) {
        if (mean[o] > mean[m]) ++better;
        else if (mean[o] == mean[m]) ++tied;  // includes m itself
      }
      // Tied methods occupy positions better+1 .. better+tied.
      ranks[m].push_back(static_cast<double>(better) + (static_cast<double>(tied) + 1.0) / 2.0);
    }
  }
  for (auto& r : ranks) {
    std::sort(r.begin(), r.end());
    const std::size_t n = r.size();
    table.median_rank.push_back(n == 0 ? kNaN : n % 2 ? r[n / 2] : (r[n / 2 - 1] + r[n / 2]) / 2.0);
  }
  return table;
}

namespace {

const char* const kFixedColumns[] = {"method",      "corruption_kind", "severity", "shift_kind",
                                     "shift_param", "seed",            "accuracy", "delta_vs_source"};
constexpr std::size_t kFixedCount = std::size(kFixedColumns);

std::string per_class_column(std::size_t c) { return "per_class_acc_" + std::to_string(c); }

void check_text_field(const std::string& value, const char* column) {
  require(value.find_first_of(",\"\n\r") == std::string::npos, ErrorKind::invalid_argument,
          std::string(column) + " value '" + value + "' cannot be written to CSV");
}

std::string format_csv(const EvalReport& report) {
  std::ostringstream out;
  for (std::size_t i = 0; i < kFixedCount; ++i) out << (i ? "," : "") << kFixedColumns[i];
  for (std::size_t c = 0; c < report.class_count; ++c) out << ',' << per_class_column(c);
  out << '\n';
  for (const auto& row : report.rows) {
    require(row.per_class_accuracy.size() == report.class_count, ErrorKind::invalid_argument,
            cell_name(row) + ": per-class accuracy has the wrong length");
    check_text_field(row.method, "method");
    check_text_field(row.corruption_kind, "corruption_kind");
    check_text_field(row.shift_kind, "shift_kind");
    check_text_field(row.shift_param, "shift_param");
    out << row.method << ',' << row.corruption_kind << ',' << row.severity << ',' << row.shift_kind << ','
        << row.shift_param << ',' << row.seed << ',' << format_float(row.accuracy) << ','
        << format_float(row.delta_vs_source);
    for (double a : row.per_class_accuracy) {
      out << ',';
      if (!std::isnan(a)) out << format_float(a);
    }
    out << '\n';
  }
  return out.str();
}

std::string format_json(const EvalReport& report) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : report.rows) {
    require(row.per_class_accuracy.size() == report.class_count, ErrorKind::invalid_argument,
            cell_name(row) + ": per-class accuracy has the wrong length");
    nlohmann::ordered_json j;
    j["method"] = row.method;
    j["corruption_kind"] = row.corruption_kind;
    j["severity"] = row.severity;
    j["shift_kind"] = row.shift_kind;
    j["shift_param"] = row.shift_param;
    j["seed"] = row.seed;
    j["accuracy"] = six_digits(row.accuracy);
    j["delta_vs_source"] = six_digits(row.delta_vs_source);
    for (std::size_t c = 0; c < report.class_count; ++c) {
      const double a = row.per_class_accuracy[c];
      j[per_class_column(c)] = std::isnan(a) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(six_digits(a));
    }
    rows.push_back(std::move(j));
  }
  nlohmann::ordered_json doc;
  doc["class_count"] = report.class_count;
  doc["rows"] = std::move(rows);
  return doc.dump(2) + "\n";
}

EvalReport parse_csv(std::string_view text) {
  std::vector<std::string_view> lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  require(!lines.empty(), ErrorKind::bad_format, "report CSV has no header");
  for (auto& line : lines) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  }

  const auto header = split(lines[0], ',');
  require(header.size() >= kFixedCount, ErrorKind::bad_format, "report CSV header is too short");
  for (std::size_t i = 0; i < kFixedCount; ++i) {
    require(header[i] == kFixedColumns[i], ErrorKind::bad_format,
            "report CSV column " + std::to_string(i + 1) + " should be " + kFixedColumns[i]);
  }
  EvalReport report;
  report.class_count = header.size() - kFixedCount;
  for (std::size_t c = 0; c < report.class_count; ++c) {
    require(header[kFixedCount + c] == per_class_column(c), ErrorKind::bad_format,
            "report CSV column " + std::to_string(kFixedCount + c + 1) + " should be " + per_class_column(c));
  }

  for (std::size_t l = 1; l < lines.size(); ++l) {
    const std::string where = "report CSV line " + std::to_string(l + 1);
    const auto fields = split(lines[l], ',');
    require(fields.size() == header.size(), ErrorKind::bad_format,
            where + ": expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    EvalRow row;
    row.method = std::string(fields[0]);
    row.corruption_kind = std::string(fields[1]);
    row.severity = static_cast<int>(parse_unsigned(fields[2], where));
    row.shift_kind = std::string(fields[3]);
    row.shift_param = std::string(fields[4]);
    row.seed = parse_unsigned(fields[5], where);
    row.accuracy = parse_double(fields[6], where);
    row.delta_vs_source = parse_double(fields[7], where);
    for (std::size_t c = 0; c < report.class_count; ++c) {
      const auto field = fields[kFixedCount + c];
      row.per_class_accuracy.push_back(field.empty() ? kNaN : parse_double(field, where));
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

EvalReport parse_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::bad_format, std::string("report JSON: ") + e.what());
  }
  try {
    EvalReport report;
    report.class_count = doc.at("class_count").get<std::size_t>();
    for (const auto& j : doc.at("rows")) {
      EvalRow row;
      row.method = j.at("method").get<std::string>();
      row.corruption_kind = j.at("corruption_kind").get<std::string>();
      row.severity = j.at("severity").get<int>();
      row.shift_kind = j.at("shift_kind").get<std::string>();
      row.shift_param = j.at("shift_param").get<std::string>();
      row.seed = j.at("seed").get<std::uint64_t>();
      row.accuracy = j.at("accuracy").get<double>();
      row.delta_vs_source = j.at("delta_vs_source").get<double>();
      for (std::size_t c = 0; c < report.class_count; ++c) {
        const auto& v = j.at(per_class_column(c));
        row.per_class_accuracy.push_back(v.is_null() ? kNaN : v.get<double>());
      }
      report.rows.push_back(std::move(row));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::bad_format, std::string("report JSON: ") + e.what());
  }
}

}  // namespace

std::string format_report(const EvalReport& report, ReportFormat format) {
  return format == ReportFormat::csv ? format_csv(report) : format_json(report);
}

void emit_report(const EvalReport& report, ReportFormat format, const std::filesystem::path& path) {
  const std::string text = format_report(report, format);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot write report " + path.string());
  out << text;
  out.flush();
  require(out.good(), ErrorKind::io, "failed writing report " + path.string());
}

EvalReport parse_report(std::string_view text, ReportFormat format) {
  return format == ReportFormat::csv ? parse_csv(text) : parse_json(text);
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open report " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  const ReportFormat format = path.extension() == ".json" ? ReportFormat::json : ReportFormat::csv;
  try {
    return parse_report(text.str(), format);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.detail());
  }
}

}  // namespace ttnlab
