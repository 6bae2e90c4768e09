#include "container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ttnlab/error.hpp"

namespace ttnlab::container {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

void put_floats(std::string& out, const std::vector<float>& values) {
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

}  // namespace

const Array& Decoded::array(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  fail(ErrorKind::bad_format, "missing array '" + std::string(name) + "'");
}

std::string encode(std::string_view magic, nlohmann::json header, const std::vector<Array>& arrays) {
  require(magic.size() == 8, ErrorKind::invalid_argument, "magic must be 8 bytes");
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    require(shape_numel(a.shape) == a.data.size(), ErrorKind::shape_mismatch, "array '" + a.name + "' size mismatch");
    manifest.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}});
    offset += a.data.size() * sizeof(float);
  }
  header["format_version"] = kFormatVersion;
  header["arrays"] = std::move(manifest);
  const std::string text = header.dump();

  std::string out(magic);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& a : arrays) put_floats(out, a.data);
  return out;
}

Decoded decode(std::string_view magic, std::string_view bytes) {
  require(bytes.size() >= 8 && bytes.substr(0, 8) == magic, ErrorKind::bad_format,
          "expected magic '" + std::string(magic) + "'");
  require(bytes.size() >= 12, ErrorKind::truncated, "missing header length");
  const std::uint32_t header_len = get_u32(bytes, 8);
  require(bytes.size() >= 12 + static_cast<std::size_t>(header_len), ErrorKind::truncated,
          "header declares " + std::to_string(header_len) + " bytes but file is shorter");

  Decoded out;
  try {
    out.header = nlohmann::json::parse(bytes.substr(12, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::bad_format, std::string("header is not valid JSON: ") + e.what());
  }
  require(out.header.is_object() && out.header.contains("format_version") && out.header.contains("arrays"),
          ErrorKind::bad_format, "header lacks format_version/arrays");
  require(out.header["format_version"] == kFormatVersion, ErrorKind::unsupported_version,
          "format version " + out.header["format_version"].dump());

  const std::string_view payload = bytes.substr(12 + header_len);
  std::uint64_t expected_end = 0;
  try {
    for (const auto& entry : out.header["arrays"]) {
      Array a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const std::size_t count = shape_numel(a.shape);
      require(offset == expected_end, ErrorKind::bad_format, "array '" + a.name + "' is not in manifest order");
      expected_end = offset + count * sizeof(float);
      require(expected_end <= payload.size(), ErrorKind::truncated,
              "array '" + a.name + "' extends past the end of the payload");
      a.data.resize(count);
      for (std::size_t i = 0; i < count; ++i)
        a.data[i] = std::bit_cast<float>(get_u32(payload, static_cast<std::size_t>(offset) + 4 * i));
      out.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::bad_format, std::string("malformed array manifest: ") + e.what());
  }
  require(expected_end == payload.size(), ErrorKind::truncated,
          "payload has " + std::to_string(payload.size()) + " bytes, manifest declares " + std::to_string(expected_end));
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "failed writing '" + path.string() + "'");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace ttnlab::container
