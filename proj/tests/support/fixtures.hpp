#pragma once

#include <cstdint>
#include <filesystem>
#include <random>

#include "ttnlab/data.hpp"
#include "ttnlab/model.hpp"
#include "ttnlab/scoring.hpp"

namespace ttnlab::testkit {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);

/// Untrained model with random (non-trivial) BN source statistics.
ModelCheckpoint random_model(std::uint64_t seed, std::size_t class_count = 4,
                             std::vector<std::size_t> widths = {4, 6, 8}, std::size_t image_size = 8);

/// A small model trained briefly on a 4-class synthetic set, with its score
/// table and a held-out split. Built once per process.
struct TinyLab {
  LabeledDataset train;
  LabeledDataset test;
  ModelCheckpoint model;
  ScoreTable table;
};
const TinyLab& tiny_lab();

/// Fresh empty directory under the system temp dir, removed at exit.
std::filesystem::path scratch_dir(const std::string& name);

std::string read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace ttnlab::testkit
