#include "ttnlab/config.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ttnlab/error.hpp"

namespace ttnlab {
namespace {

namespace pt = boost::property_tree;

// Allowed keys per section.
const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"data",
       {"source", "cifar_dir", "classes", "train_per_class", "test_per_class", "image_size", "channels",
        "pixel_noise", "amplitude_min", "amplitude_max", "orientation_jitter", "template_seed", "train_seed",
        "test_seed"}},
      {"model", {"widths", "downsample_every", "epsilon", "init_seed"}},
      {"train",
       {"epochs", "batch_size", "learning_rate", "momentum", "weight_decay", "bn_momentum", "seed",
        "freeze_samples"}},
      {"score", {"per_class_cap", "seed", "propagation"}},
      {"adapt", {"depth_fraction", "prior_estimate"}},
      {"corruption", {"gaussian_noise", "speckle_noise", "brightness", "contrast", "noise_scale"}},
      {"grid", {"methods", "shifts", "corruptions", "batch_size", "repeats", "seed"}},
      {"analysis", {"layer_shifts", "layer_corruptions", "overlap_fraction", "overlap_corruption", "repeats"}},
  };
  return keys;
}

class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  std::optional<std::string> raw(const std::string& key) const {
    if (!tree_) return std::nullopt;
    auto value = tree_->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!value) return std::nullopt;
    return boost::trim_copy(*value);
  }

  template <class T>
  void read(const std::string& key, T& out) const {
    if (auto text = raw(key)) out = convert<T>(key, *text);
  }

  template <class T>
  T convert(const std::string& key, const std::string& text) const {
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_floating_point_v<T>) {
      // strtod accepts forms like "5e-4" that from_chars on older
      // libstdc++ handles inconsistently for float.
      char* end = nullptr;
      const double value = std::strtod(text.c_str(), &end);
      if (text.empty() || end != text.c_str() + text.size()) bad(key, text, "a number");
      return static_cast<T>(value);
    } else {
      T value{};
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
      if (ec != std::errc() || ptr != text.data() + text.size()) bad(key, text, "a non-negative integer");
      return value;
    }
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> items;
    auto text = raw(key);
    if (!text || text->empty()) return items;
    boost::split(items, *text, boost::is_any_of(","));
    for (auto& item : items) {
      boost::trim(item);
      if (item.empty()) fail(ErrorKind::invalid_argument, where(key) + ": empty list element");
    }
    return items;
  }

  template <class T>
  std::vector<T> numbers(const std::string& key) const {
    std::vector<T> out;
    for (const auto& item : list(key)) out.push_back(convert<T>(key, item));
    return out;
  }

  std::string where(const std::string& key) const { return "[" + name_ + "] " + key; }

  [[noreturn]] void bad(const std::string& key, const std::string& text, const char* expected) const {
    fail(ErrorKind::invalid_argument, where(key) + ": expected " + expected + ", got '" + text + "'");
  }

 private:
  const pt::ptree* tree_;
  std::string name_;
};

template <class T, class Parse>
std::vector<T> parse_each(const Section& section, const std::string& key, Parse parse) {
  std::vector<T> out;
  for (const auto& item : section.list(key)) {
    try {
      out.push_back(parse(item));
    } catch (const Error& e) {
      fail(e.kind(), section.where(key) + ": " + e.detail());
    }
  }
  return out;
}

std::array<double, 5> severity_table(const Section& section, const std::string& key) {
  require(section.raw(key).has_value(), ErrorKind::invalid_argument, section.where(key) + " is required");
  auto values = section.numbers<double>(key);
  require(values.size() == 5, ErrorKind::invalid_argument,
          section.where(key) + ": expected 5 values (severities 1..5), got " + std::to_string(values.size()));
  std::array<double, 5> table{};
  std::copy(values.begin(), values.end(), table.begin());
  return table;
}

}  // namespace

std::vector<ScenarioSpec> GridConfig::scenarios() const {
  std::vector<std::uint64_t> seeds;
  for (std::size_t r = 0; r < repeats; ++r) seeds.push_back(seed + r);
  std::vector<ScenarioSpec> out;
  for (const auto& corruption : corruptions) {
    for (const auto& shift : shifts) {
      out.push_back(ScenarioSpec{corruption, shift, batch_size, seeds});
    }
  }
  return out;
}

LabConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorKind::bad_format, "config line " + std::to_string(e.line()) + ": " + e.message());
  }

  for (const auto& [name, section] : tree) {
    auto it = schema().find(name);
    if (it == schema().end()) {
      if (!section.data().empty()) fail(ErrorKind::invalid_argument, "config key '" + name + "' outside a section");
      fail(ErrorKind::invalid_argument, "unknown config section [" + name + "]");
    }
    for (const auto& entry : section) {
      require(it->second.count(entry.first) == 1, ErrorKind::invalid_argument,
              "unknown config key [" + name + "] " + entry.first);
    }
  }
  auto section = [&](const std::string& name) {
    auto child = tree.get_child_optional(name);
    return Section(child ? &*child : nullptr, name);
  };

  LabConfig config;

  const Section data = section("data");
  data.read("source", config.data.source);
  require(config.data.source == "synthetic" || config.data.source == "cifar10", ErrorKind::invalid_argument,
          "[data] source must be synthetic or cifar10, got '" + config.data.source + "'");
  std::string cifar_dir;
  data.read("cifar_dir", cifar_dir);
  config.data.cifar_dir = cifar_dir;
  data.read("classes", config.data.classes);
  data.read("train_per_class", config.data.train_per_class);
  data.read("test_per_class", config.data.test_per_class);
  data.read("image_size", config.data.image_size);
  data.read("channels", config.data.synth.channels);
  data.read("pixel_noise", config.data.synth.pixel_noise);
  data.read("amplitude_min", config.data.synth.amplitude_min);
  data.read("amplitude_max", config.data.synth.amplitude_max);
  data.read("orientation_jitter", config.data.synth.orientation_jitter);
  data.read("template_seed", config.data.synth.template_seed);
  data.read("train_seed", config.data.train_seed);
  data.read("test_seed", config.data.test_seed);
  if (config.data.source == "cifar10") config.data.classes = 10;
  require(config.data.classes >= 2, ErrorKind::invalid_argument, "[data] classes must be at least 2");

  const Section model = section("model");
  if (model.raw("widths")) config.model.widths = model.numbers<std::size_t>("widths");
  require(!config.model.widths.empty(), ErrorKind::invalid_argument, "[model] widths must not be empty");
  model.read("downsample_every", config.model.downsample_every);
  model.read("epsilon", config.model.epsilon);
  model.read("init_seed", config.model.init_seed);
  require(config.model.epsilon > 0.0, ErrorKind::invalid_argument, "[model] epsilon must be positive");

  const Section train = section("train");
  train.read("epochs", config.train.epochs);
  train.read("batch_size", config.train.batch_size);
  train.read("learning_rate", config.train.learning_rate);
  train.read("momentum", config.train.momentum);
  train.read("weight_decay", config.train.weight_decay);
  train.read("bn_momentum", config.train.bn_momentum);
  train.read("seed", config.train.seed);
  train.read("freeze_samples", config.train.freeze_samples);
  config.train.bn_epsilon = config.model.epsilon;
  config.train.validate();

  const Section score = section("score");
  score.read("per_class_cap", config.score.per_class_cap);
  score.read("seed", config.score.seed);
  if (auto p = score.raw("propagation")) {
    if (*p == "source") config.score.propagation = Propagation::source;
    else if (*p == "batch") config.score.propagation = Propagation::batch;
    else score.bad("propagation", *p, "source or batch");
  }

  const Section adapt = section("adapt");
  if (auto d = adapt.raw("depth_fraction")) {
    if (*d == "linear") config.adapt.schedule = DepthSchedule::linear;
    else if (*d == "algorithmic") config.adapt.schedule = DepthSchedule::algorithmic;
    else adapt.bad("depth_fraction", *d, "linear or algorithmic");
  }
  if (auto p = adapt.raw("prior_estimate")) {
    if (*p == "hard") config.adapt.prior_estimate = PriorEstimate::hard;
    else if (*p == "soft") config.adapt.prior_estimate = PriorEstimate::soft;
    else adapt.bad("prior_estimate", *p, "hard or soft");
  }

  const Section corruption = section("corruption");
  config.corruption.gaussian_noise = severity_table(corruption, "gaussian_noise");
  config.corruption.speckle_noise = severity_table(corruption, "speckle_noise");
  config.corruption.brightness = severity_table(corruption, "brightness");
  config.corruption.contrast = severity_table(corruption, "contrast");
  corruption.read("noise_scale", config.corruption.noise_scale);
  require(config.corruption.noise_scale >= 0.0, ErrorKind::invalid_argument,
          "[corruption] noise_scale must be non-negative");

  const Section grid = section("grid");
  if (grid.raw("methods")) {
    config.grid.methods = parse_each<MethodId>(grid, "methods", [](const std::string& s) { return MethodId::parse(s); });
  } else {
    for (const char* name : {"source", "ttn", "hybrid_ttn"}) config.grid.methods.push_back(MethodId::parse(name));
  }
  config.grid.shifts = parse_each<LabelShiftSpec>(grid, "shifts", [](const std::string& s) { return parse_label_shift(s); });
  if (config.grid.shifts.empty()) config.grid.shifts.push_back(NClassShift{});
  config.grid.corruptions = parse_each<std::optional<CorruptionSpec>>(
      grid, "corruptions", [](const std::string& s) { return parse_corruption(s); });
  if (config.grid.corruptions.empty()) config.grid.corruptions.push_back(std::nullopt);
  grid.read("batch_size", config.grid.batch_size);
  grid.read("repeats", config.grid.repeats);
  grid.read("seed", config.grid.seed);
  require(config.grid.batch_size >= 2, ErrorKind::invalid_argument, "[grid] batch_size must be at least 2");
  require(config.grid.repeats >= 1, ErrorKind::invalid_argument, "[grid] repeats must be at least 1");

  const Section analysis = section("analysis");
  config.analysis.layer_shifts =
      parse_each<LabelShiftSpec>(analysis, "layer_shifts", [](const std::string& s) { return parse_label_shift(s); });
  if (config.analysis.layer_shifts.empty()) config.analysis.layer_shifts.push_back(NClassShift{});
  config.analysis.layer_corruptions = parse_each<std::optional<CorruptionSpec>>(
      analysis, "layer_corruptions", [](const std::string& s) { return parse_corruption(s); });
  if (config.analysis.layer_corruptions.empty()) config.analysis.layer_corruptions.push_back(std::nullopt);
  analysis.read("overlap_fraction", config.analysis.overlap_fraction);
  require(config.analysis.overlap_fraction > 0.0 && config.analysis.overlap_fraction <= 1.0,
          ErrorKind::invalid_argument, "[analysis] overlap_fraction must be in (0, 1]");
  if (auto c = analysis.raw("overlap_corruption")) {
    try {
      config.analysis.overlap_corruption = parse_corruption(*c);
    } catch (const Error& e) {
      fail(e.kind(), analysis.where("overlap_corruption") + ": " + e.detail());
    }
  }
  analysis.read("repeats", config.analysis.repeats);
  require(config.analysis.repeats >= 1, ErrorKind::invalid_argument, "[analysis] repeats must be at least 1");

  return config;
}

LabConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  try {
    return parse_config(text.str());
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.detail());
  }
}

namespace {

LabeledDataset load_split(const DataConfig& config, bool train) {
  if (config.source == "cifar10") {
    require(!config.cifar_dir.empty(), ErrorKind::invalid_argument, "[data] cifar_dir is required for cifar10");
    return load_cifar10_binary(config.cifar_dir, train);
  }
  return synth_dataset(config.classes, train ? config.train_per_class : config.test_per_class, config.image_size,
                       train ? config.train_seed : config.test_seed, config.synth);
}

}  // namespace

LabeledDataset load_train_data(const DataConfig& config) { return load_split(config, true); }
LabeledDataset load_test_data(const DataConfig& config) { return load_split(config, false); }

std::vector<LayerSpec> configured_architecture(const LabConfig& config) {
  const std::size_t in_channels = config.data.source == "cifar10" ? 3 : config.data.synth.channels;
  return default_architecture(in_channels, config.data.classes, config.model.widths, config.model.downsample_every);
}

}  // namespace ttnlab
