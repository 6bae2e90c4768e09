#include "ttnlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "container.hpp"
#include "ttnlab/error.hpp"

namespace ttnlab {

std::vector<std::vector<std::size_t>> LabeledDataset::class_indices() const {
  std::vector<std::vector<std::size_t>> out(class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(i);
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.images = images.gather(rows);
  out.class_count = class_count;
  out.labels.reserve(rows.size());
  for (auto r : rows) out.labels.push_back(labels[r]);
  return out;
}

void LabeledDataset::validate(bool require_every_class) const {
  require(class_count >= 1, ErrorKind::invalid_argument, "dataset has no classes");
  require(images.rank() >= 2 && images.dim(0) == labels.size(), ErrorKind::shape_mismatch,
          "dataset images " + shape_string(images.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  std::vector<std::size_t> counts(class_count, 0);
  for (int l : labels) {
    require(l >= 0 && static_cast<std::size_t>(l) < class_count, ErrorKind::invalid_argument,
            "label " + std::to_string(l) + " outside [0," + std::to_string(class_count) + ")");
    ++counts[static_cast<std::size_t>(l)];
  }
  if (require_every_class)
    for (std::size_t c = 0; c < class_count; ++c)
      require(counts[c] > 0, ErrorKind::invalid_argument, "class " + std::to_string(c) + " has no samples");
}

LabeledDataset synth_dataset(std::size_t class_count, std::size_t per_class, std::size_t image_size,
                             std::uint64_t seed, const SynthOptions& options) {
  require(class_count >= 2 && per_class >= 2, ErrorKind::invalid_argument, "synthetic dataset needs C >= 2 and n >= 2");
  require(image_size >= 4 && options.channels >= 1, ErrorKind::invalid_argument, "image too small");
  constexpr double two_pi = 2.0 * std::numbers::pi;

  struct Template {
    double orientation;
    double frequency;  // cycles per image
    std::vector<double> colour;
  };
  std::mt19937_64 template_rng(options.template_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Template> templates(class_count);
  for (std::size_t c = 0; c < class_count; ++c) {
    auto& t = templates[c];
    // Orientations spread over half a turn; neighbouring classes alternate
    // between two spatial frequencies.
    t.orientation = std::numbers::pi * (static_cast<double>(c) + 0.25 * unit(template_rng)) / static_cast<double>(class_count);
    t.frequency = (c % 2 == 0 ? 2.0 : 3.5) + 0.5 * unit(template_rng);
    t.colour.resize(options.channels);
    for (auto& w : t.colour) w = 0.4 + 0.6 * unit(template_rng);
  }

  const std::size_t n = class_count * per_class;
  const std::size_t plane = image_size * image_size;
  Tensor images({n, options.channels, image_size, image_size});
  std::vector<int> labels(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> phase_dist(0.0, two_pi);
  std::uniform_real_distribution<double> amp_dist(options.amplitude_min, options.amplitude_max);
  std::uniform_real_distribution<double> offset_dist(0.35, 0.65);
  std::uniform_real_distribution<double> jitter_dist(-options.orientation_jitter, options.orientation_jitter);

  std::size_t idx = 0;
  for (std::size_t c = 0; c < class_count; ++c) {
    const auto& t = templates[c];
    for (std::size_t s = 0; s < per_class; ++s, ++idx) {
      labels[idx] = static_cast<int>(c);
      const double phase = phase_dist(rng);
      const double amplitude = amp_dist(rng);
      const double offset = offset_dist(rng);
      const double theta = t.orientation + jitter_dist(rng);
      const double kx = two_pi * t.frequency * std::cos(theta) / static_cast<double>(image_size);
      const double ky = two_pi * t.frequency * std::sin(theta) / static_cast<double>(image_size);
      float* img = images.data() + idx * options.channels * plane;
      for (std::size_t i = 0; i < image_size; ++i)
        for (std::size_t j = 0; j < image_size; ++j) {
          const double wave = std::sin(kx * static_cast<double>(j) + ky * static_cast<double>(i) + phase);
          for (std::size_t ch = 0; ch < options.channels; ++ch) {
            const double v = offset + amplitude * t.colour[ch] * wave + options.pixel_noise * gauss(rng);
            img[ch * plane + i * image_size + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
    }
  }
  return {std::move(images), std::move(labels), class_count};
}

namespace {
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = kCifarPixels + 1;
constexpr std::size_t kCifarClasses = 10;
}  // namespace

LabeledDataset read_cifar10_file(const std::filesystem::path& file) {
  const std::string bytes = container::read_file(file);
  require(!bytes.empty(), ErrorKind::truncated, "'" + file.string() + "' is empty");
  require(bytes.size() % kCifarRecord == 0, ErrorKind::truncated,
          "'" + file.string() + "' has " + std::to_string(bytes.size()) + " bytes, not a multiple of 3073");
  const std::size_t n = bytes.size() / kCifarRecord;
  Tensor images({n, 3, kCifarSide, kCifarSide});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + i * kCifarRecord);
    require(rec[0] < kCifarClasses, ErrorKind::bad_format,
            "record " + std::to_string(i) + " has label byte " + std::to_string(rec[0]));
    labels[i] = rec[0];
    float* dst = images.data() + i * kCifarPixels;
    for (std::size_t p = 0; p < kCifarPixels; ++p) dst[p] = static_cast<float>(rec[1 + p]) / 255.0f;
  }
  return {std::move(images), std::move(labels), kCifarClasses};
}

void write_cifar10_file(const std::filesystem::path& file, const LabeledDataset& dataset) {
  require(dataset.images.shape() == Shape{dataset.size(), 3, kCifarSide, kCifarSide}, ErrorKind::shape_mismatch,
          "CIFAR-10 records need [N,3,32,32] images");
  std::string bytes;
  bytes.reserve(dataset.size() * kCifarRecord);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    require(dataset.labels[i] >= 0 && dataset.labels[i] < static_cast<int>(kCifarClasses), ErrorKind::invalid_argument,
            "CIFAR-10 label out of range");
    bytes.push_back(static_cast<char>(dataset.labels[i]));
    const float* src = dataset.images.data() + i * kCifarPixels;
    for (std::size_t p = 0; p < kCifarPixels; ++p)
      bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(src[p], 0.0f, 1.0f) * 255.0f))));
  }
  container::write_file(file, bytes);
}

LabeledDataset load_cifar10_binary(const std::filesystem::path& dir, bool train) {
  std::vector<std::filesystem::path> files;
  if (train)
    for (int b = 1; b <= 5; ++b) files.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
  else
    files.push_back(dir / "test_batch.bin");

  std::vector<float> pixels;
  std::vector<int> labels;
  for (const auto& f : files) {
    require(std::filesystem::exists(f), ErrorKind::io, "missing CIFAR-10 file '" + f.string() + "'");
    auto part = read_cifar10_file(f);
    pixels.insert(pixels.end(), part.images.storage().begin(), part.images.storage().end());
    labels.insert(labels.end(), part.labels.begin(), part.labels.end());
  }
  const std::size_t n = labels.size();
  return {Tensor({n, 3, kCifarSide, kCifarSide}, std::move(pixels)), std::move(labels), kCifarClasses};
}

void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path) {
  dataset.validate(false);
  std::vector<float> labels(dataset.labels.begin(), dataset.labels.end());
  nlohmann::json header = {{"content", "dataset"}, {"class_count", dataset.class_count}};
  container::write_file(path, container::encode("TTNLAB01", std::move(header),
                                                {{"images", dataset.images.shape(), dataset.images.storage()},
                                                 {"labels", {dataset.size()}, std::move(labels)}}));
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  const auto decoded = container::decode("TTNLAB01", container::read_file(path));
  require(decoded.header.value("content", "") == "dataset", ErrorKind::bad_format, "container does not hold a dataset");
  LabeledDataset out;
  out.class_count = decoded.header.at("class_count").get<std::size_t>();
  const auto& images = decoded.array("images");
  out.images = Tensor(images.shape, images.data);
  for (float l : decoded.array("labels").data) out.labels.push_back(static_cast<int>(l));
  out.validate(false);
  return out;
}

std::string_view to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::speckle_noise: return "speckle_noise";
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::contrast: return "contrast";
  }
  return "?";
}

CorruptionKind corruption_kind_from_string(std::string_view name) {
  for (auto k : {CorruptionKind::gaussian_noise, CorruptionKind::speckle_noise, CorruptionKind::brightness,
                 CorruptionKind::contrast})
    if (to_string(k) == name) return k;
  fail(ErrorKind::invalid_argument, "unknown corruption '" + std::string(name) + "'");
}

double CorruptionTables::parameter(const CorruptionSpec& spec) const {
  require(spec.severity >= 1 && spec.severity <= 5, ErrorKind::invalid_argument,
          "severity must be in 1..5, got " + std::to_string(spec.severity));
  const auto i = static_cast<std::size_t>(spec.severity - 1);
  switch (spec.kind) {
    case CorruptionKind::gaussian_noise: return gaussian_noise[i] * noise_scale;
    case CorruptionKind::speckle_noise: return speckle_noise[i] * noise_scale;
    case CorruptionKind::brightness: return brightness[i];
    case CorruptionKind::contrast: return contrast[i];
  }
  return 0.0;
}

Tensor corrupt(const Tensor& images, const CorruptionSpec& spec, const CorruptionTables& tables, std::uint64_t seed) {
  if (spec.severity == 0) return images;
  return apply_corruption(images, spec.kind, tables.parameter(spec), seed);
}

Tensor apply_corruption(const Tensor& images, CorruptionKind kind, double parameter, std::uint64_t seed) {
  require(images.rank() >= 2, ErrorKind::shape_mismatch, "corruption expects [N,C,...] images");
  Tensor out(images.shape());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto clip = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
  switch (kind) {
    case CorruptionKind::gaussian_noise:
      for (std::size_t i = 0; i < images.numel(); ++i) out[i] = clip(images[i] + parameter * gauss(rng));
      break;
    case CorruptionKind::speckle_noise:
      for (std::size_t i = 0; i < images.numel(); ++i) out[i] = clip(images[i] * (1.0 + parameter * gauss(rng)));
      break;
    case CorruptionKind::brightness:
      for (std::size_t i = 0; i < images.numel(); ++i) out[i] = clip(images[i] + parameter);
      break;
    case CorruptionKind::contrast: {
      // Contrast is scaled around each image's per-channel mean.
      const std::size_t planes = images.dim(0) * images.dim(1);
      const std::size_t area = images.numel() / planes;
      for (std::size_t p = 0; p < planes; ++p) {
        const float* src = images.data() + p * area;
        double mean = 0.0;
        for (std::size_t j = 0; j < area; ++j) mean += src[j];
        mean /= static_cast<double>(area);
        for (std::size_t j = 0; j < area; ++j) out[p * area + j] = clip(parameter * (src[j] - mean) + mean);
      }
      break;
    }
  }
  return out;
}

std::vector<double> sample_symmetric_dirichlet(double alpha, std::size_t k, std::mt19937_64& rng) {
  require(alpha > 0.0 && k >= 1, ErrorKind::invalid_argument, "Dirichlet needs alpha > 0 and k >= 1");
  // Gamma(a) = Gamma(a + 1) * U^(1/a); kept in log space.
  std::gamma_distribution<double> gamma(alpha + 1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> log_g(k);
  for (auto& lg : log_g) {
    double u = unit(rng);
    while (u <= 0.0) u = unit(rng);
    lg = std::log(gamma(rng)) + std::log(u) / alpha;
  }
  const double mx = *std::max_element(log_g.begin(), log_g.end());
  std::vector<double> p(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += (p[i] = std::exp(log_g[i] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

std::vector<std::size_t> label_shift_counts(const LabelShiftSpec& spec, std::size_t class_count,
                                            std::size_t batch_size, std::mt19937_64& rng) {
  require(batch_size >= 2, ErrorKind::invalid_argument, "batch size must be >= 2");
  std::vector<std::size_t> counts(class_count, 0);
  if (const auto* nc = std::get_if<NClassShift>(&spec)) {
    require(nc->n >= 1 && nc->n <= class_count, ErrorKind::invalid_argument,
            "NClass n=" + std::to_string(nc->n) + " outside [1," + std::to_string(class_count) + "]");
    std::vector<std::size_t> classes(class_count);
    std::iota(classes.begin(), classes.end(), 0);
    std::shuffle(classes.begin(), classes.end(), rng);
    classes.resize(nc->n);
    std::sort(classes.begin(), classes.end());
    for (std::size_t i = 0; i < classes.size(); ++i)
      counts[classes[i]] = batch_size / nc->n + (i < batch_size % nc->n ? 1 : 0);
  } else if (const auto* dir = std::get_if<DirichletShift>(&spec)) {
    const auto p = sample_symmetric_dirichlet(dir->alpha, class_count, rng);
    std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
    for (std::size_t i = 0; i < batch_size; ++i) ++counts[pick(rng)];
  } else {
    const auto& ex = std::get<ExplicitShift>(spec);
    require(ex.counts.size() == class_count, ErrorKind::invalid_argument, "explicit counts must list every class");
    require(std::accumulate(ex.counts.begin(), ex.counts.end(), std::size_t{0}) == batch_size,
            ErrorKind::invalid_argument, "explicit counts do not sum to the batch size");
    counts = ex.counts;
  }
  return counts;
}

LabeledBatch sample_label_shift(const LabeledDataset& dataset, const LabelShiftSpec& spec, std::size_t batch_size) {
  const std::uint64_t seed = std::visit([](const auto& s) { return s.seed; }, spec);
  std::mt19937_64 rng(seed);
  const auto counts = label_shift_counts(spec, dataset.class_count, batch_size, rng);
  const auto pools = dataset.class_indices();

  std::vector<std::size_t> rows;
  rows.reserve(batch_size);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) continue;
    require(!pools[c].empty(), ErrorKind::invalid_argument, "class " + std::to_string(c) + " has no samples to draw");
    std::vector<std::size_t> pool = pools[c];
    std::shuffle(pool.begin(), pool.end(), rng);
    std::uniform_int_distribution<std::size_t> any(0, pool.size() - 1);
    for (std::size_t i = 0; i < counts[c]; ++i) rows.push_back(i < pool.size() ? pool[i] : pool[any(rng)]);
  }
  std::shuffle(rows.begin(), rows.end(), rng);

  LabeledBatch batch;
  batch.images = dataset.images.gather(rows);
  for (auto r : rows) batch.labels.push_back(dataset.labels[r]);
  return batch;
}

}  // namespace ttnlab
