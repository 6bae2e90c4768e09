#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ttnlab/model.hpp"

namespace ttnlab {

inline constexpr char kCheckpointMagic[] = "TTNLAB01";

/// Serialized checkpoint bytes: magic, length-prefixed JSON header with the
/// layer specs and array manifest, then float32 little-endian payloads.
std::string encode_checkpoint(const ModelCheckpoint& model);
ModelCheckpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelCheckpoint& model, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 over the serialized checkpoint. Ties score tables to the model
/// they were computed from.
std::uint64_t checkpoint_digest(const ModelCheckpoint& model);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace ttnlab
