#pragma once

// Shared binary container: 8-byte magic, uint32 little-endian header length,
// UTF-8 JSON header carrying an "arrays" manifest (name, shape, byte offset
// into the payload), then the float32 little-endian payload.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ttnlab/tensor.hpp"

namespace ttnlab::container {

inline constexpr int kFormatVersion = 1;

struct Array {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Decoded {
  nlohmann::json header;
  std::vector<Array> arrays;

  const Array& array(std::string_view name) const;
};

std::string encode(std::string_view magic, nlohmann::json header, const std::vector<Array>& arrays);
Decoded decode(std::string_view magic, std::string_view bytes);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace ttnlab::container
