#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ttnlab/adaptation.hpp"
#include "ttnlab/data.hpp"
#include "ttnlab/experiment.hpp"
#include "ttnlab/scoring.hpp"
#include "ttnlab/train.hpp"

namespace ttnlab {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | cifar10
  std::filesystem::path cifar_dir;
  std::size_t classes = 8;
  std::size_t train_per_class = 256;
  std::size_t test_per_class = 128;
  std::size_t image_size = 16;
  SynthOptions synth;
  std::uint64_t train_seed = 1;
  std::uint64_t test_seed = 2;
};

struct ModelConfig {
  std::vector<std::size_t> widths{16, 16, 32, 32, 64, 64};
  std::size_t downsample_every = 2;
  double epsilon = 1e-5;
  std::uint64_t init_seed = 11;
};

struct GridConfig {
  std::vector<MethodId> methods;
  std::vector<LabelShiftSpec> shifts;
  std::vector<std::optional<CorruptionSpec>> corruptions;
  std::size_t batch_size = 200;
  std::size_t repeats = 5;
  std::uint64_t seed = 1000;

  /// Cartesian product corruption x shift, each with `repeats` seeds
  /// starting at `seed`.
  std::vector<ScenarioSpec> scenarios() const;
};

struct AnalysisConfig {
  std::vector<LabelShiftSpec> layer_shifts;
  std::vector<std::optional<CorruptionSpec>> layer_corruptions;
  double overlap_fraction = 0.1;
  std::optional<CorruptionSpec> overlap_corruption;
  std::size_t repeats = 10;
};

/// Everything the CLI reads from a configuration file.
struct LabConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  ScoreOptions score;
  AdaptOptions adapt;
  CorruptionTables corruption;
  GridConfig grid;
  AnalysisConfig analysis;
};

/// INI text: [section] headers, "key = value" lines, ';' or '#' comment
/// lines. Unknown sections or keys are rejected so typos do not silently fall
/// back to defaults. The [corruption] tables are mandatory.
LabConfig parse_config(const std::string& text);
LabConfig load_config(const std::filesystem::path& path);

/// Source-domain train and test splits as configured.
LabeledDataset load_train_data(const DataConfig& config);
LabeledDataset load_test_data(const DataConfig& config);

std::vector<LayerSpec> configured_architecture(const LabConfig& config);

}  // namespace ttnlab
