#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "ttnlab/tensor.hpp"

namespace ttnlab {

/// Images in [0,1] with integer class labels.
struct LabeledDataset {
  Tensor images;  // [N, C_in, H, W]
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  /// Sample indices grouped by class.
  std::vector<std::vector<std::size_t>> class_indices() const;
  LabeledDataset subset(std::span<const std::size_t> rows) const;
  /// Labels in range and shapes consistent; with `require_every_class`, also
  /// that no class is empty.
  void validate(bool require_every_class) const;
};

/// Knobs of the synthetic texture dataset. Samples drawn with different
/// `seed`s but the same `template_seed` come from the same distribution, so a
/// train/test split is two calls with different seeds.
struct SynthOptions {
  std::size_t channels = 3;
  double pixel_noise = 0.05;
  double amplitude_min = 0.15;
  double amplitude_max = 0.30;
  double orientation_jitter = 0.08;  // radians, per sample
  std::uint64_t template_seed = 7;
};

/// Class-conditional oriented gratings with random phase, per-class colour
/// mixing and i.i.d. pixel noise. Labels are ordered class-major.
LabeledDataset synth_dataset(std::size_t class_count, std::size_t per_class, std::size_t image_size,
                             std::uint64_t seed, const SynthOptions& options = {});

/// Reads one CIFAR-10 binary batch file (3073-byte records).
LabeledDataset read_cifar10_file(const std::filesystem::path& file);
/// Writes records in the same format; pixels are rounded to bytes.
void write_cifar10_file(const std::filesystem::path& file, const LabeledDataset& dataset);
/// Loads `data_batch_1..5.bin` (train) or `test_batch.bin` (test) from `dir`.
LabeledDataset load_cifar10_binary(const std::filesystem::path& dir, bool train = true);

/// Fixture export through the checkpoint container format.
void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);

enum class CorruptionKind { gaussian_noise, speckle_noise, brightness, contrast };

std::string_view to_string(CorruptionKind kind);
CorruptionKind corruption_kind_from_string(std::string_view name);

/// Severity 0 means "no corruption"; 1..5 index the parameter tables.
struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 1;

  bool operator==(const CorruptionSpec&) const = default;
};

/// Severity-to-parameter tables, one entry per severity 1..5. Noise kinds
/// store the noise standard deviation (multiplied by `noise_scale`),
/// brightness the additive offset and contrast the contrast factor.
struct CorruptionTables {
  std::array<double, 5> gaussian_noise{};
  std::array<double, 5> speckle_noise{};
  std::array<double, 5> brightness{};
  std::array<double, 5> contrast{};
  double noise_scale = 1.0;

  double parameter(const CorruptionSpec& spec) const;
};

/// Applies the corruption and clips to [0,1]. Shape is preserved.
Tensor corrupt(const Tensor& images, const CorruptionSpec& spec, const CorruptionTables& tables, std::uint64_t seed);
/// Same, with the corruption parameter given directly.
Tensor apply_corruption(const Tensor& images, CorruptionKind kind, double parameter, std::uint64_t seed);

struct NClassShift {
  std::size_t n = 1;
  std::uint64_t seed = 0;
};
struct DirichletShift {
  double alpha = 1.0;
  std::uint64_t seed = 0;
};
struct ExplicitShift {
  std::vector<std::size_t> counts;
  std::uint64_t seed = 0;
};
using LabelShiftSpec = std::variant<NClassShift, DirichletShift, ExplicitShift>;

struct LabeledBatch {
  Tensor images;
  std::vector<int> labels;
};

/// Draws a label-shifted batch from `dataset`. Within a class, images are
/// drawn without replacement until the class pool is exhausted and with
/// replacement afterwards. The returned batch is shuffled.
LabeledBatch sample_label_shift(const LabeledDataset& dataset, const LabelShiftSpec& spec, std::size_t batch_size);

/// Per-class counts that `sample_label_shift` will realize (same RNG stream).
std::vector<std::size_t> label_shift_counts(const LabelShiftSpec& spec, std::size_t class_count,
                                            std::size_t batch_size, std::mt19937_64& rng);

/// p ~ Dir(alpha * 1_k), computed in log space so tiny alphas do not
/// underflow to an all-zero vector.
std::vector<double> sample_symmetric_dirichlet(double alpha, std::size_t k, std::mt19937_64& rng);

}  // namespace ttnlab
