#include "fixtures.hpp"

#include <fstream>
#include <sstream>

#include "ttnlab/train.hpp"

namespace ttnlab::testkit {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(u(rng));
  return t;
}

ModelCheckpoint random_model(std::uint64_t seed, std::size_t class_count, std::vector<std::size_t> widths,
                             std::size_t image_size) {
  ModelCheckpoint model = init_model({3, image_size, image_size}, default_architecture(3, class_count, widths),
                                     class_count, seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::uniform_real_distribution<float> mean(-0.5f, 0.5f), var(0.2f, 2.0f), affine(0.5f, 1.5f);
  for (auto& stats : model.bn_source_stats) {
    for (auto& m : stats.mean) m = mean(rng);
    for (auto& v : stats.var) v = var(rng);
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].kind != LayerKind::batchnorm2d) continue;
    for (auto& g : model.parameters.at(parameter_name(i, "gamma")).values()) g = affine(rng);
    for (auto& b : model.parameters.at(parameter_name(i, "beta")).values()) b = mean(rng);
  }
  return model;
}

const TinyLab& tiny_lab() {
  static const TinyLab lab = [] {
    TinyLab l;
    l.train = synth_dataset(4, 48, 8, 1);
    l.test = synth_dataset(4, 48, 8, 2);
    TrainConfig config;
    config.epochs = 6;
    config.batch_size = 16;
    l.model = train(l.train, default_architecture(3, 4, {8, 8, 16}), 3, config);
    l.table = compute_score_table(l.model, l.train);
    return l;
  }();
  return lab;
}

std::filesystem::path scratch_dir(const std::string& name) {
  static const auto root = [] {
    std::random_device rd;
    auto dir = std::filesystem::temp_directory_path() / ("ttnlab-test-" + std::to_string(rd()));
    std::filesystem::create_directories(dir);
    static struct Cleanup {
      std::filesystem::path dir;
      ~Cleanup() {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
      }
    } cleanup{dir};
    return dir;
  }();
  auto dir = root / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
}

}  // namespace ttnlab::testkit
