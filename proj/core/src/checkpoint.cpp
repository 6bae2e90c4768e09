#include "ttnlab/checkpoint.hpp"

#include "container.hpp"
#include "ttnlab/error.hpp"

namespace ttnlab {

namespace {

nlohmann::json layer_to_json(const LayerSpec& l) {
  return {{"kind", std::string(to_string(l.kind))}, {"in", l.in_channels}, {"out", l.out_channels},
          {"kernel", l.kernel}, {"stride", l.stride}, {"padding", l.padding}};
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.in_channels = j.at("in").get<std::size_t>();
  l.out_channels = j.at("out").get<std::size_t>();
  l.kernel = j.at("kernel").get<std::size_t>();
  l.stride = j.at("stride").get<std::size_t>();
  l.padding = j.at("padding").get<std::size_t>();
  return l;
}

std::string stat_name(std::size_t k, const char* what) { return "bn" + std::to_string(k) + "." + what; }

}  // namespace

std::string encode_checkpoint(const ModelCheckpoint& model) {
  model.validate();
  nlohmann::json header;
  header["content"] = "checkpoint";
  header["input_shape"] = model.input_shape;
  header["class_count"] = model.class_count;
  header["bn_layer_count"] = model.bn_layer_count();
  header["epsilon"] = model.epsilon;
  header["seed"] = model.seed;
  header["layers"] = nlohmann::json::array();
  for (const auto& l : model.layers) header["layers"].push_back(layer_to_json(l));

  std::vector<container::Array> arrays;
  for (const auto& [name, t] : model.parameters) arrays.push_back({name, t.shape(), t.storage()});
  for (std::size_t k = 0; k < model.bn_source_stats.size(); ++k) {
    const auto& s = model.bn_source_stats[k];
    arrays.push_back({stat_name(k, "running_mean"), {s.mean.size()}, s.mean});
    arrays.push_back({stat_name(k, "running_var"), {s.var.size()}, s.var});
  }
  return container::encode(kCheckpointMagic, std::move(header), arrays);
}

ModelCheckpoint decode_checkpoint(std::string_view bytes) {
  const auto decoded = container::decode(kCheckpointMagic, bytes);
  const auto& h = decoded.header;
  require(h.value("content", "") == "checkpoint", ErrorKind::bad_format, "container does not hold a checkpoint");
  ModelCheckpoint model;
  std::size_t bn_count = 0;
  try {
    model.input_shape = h.at("input_shape").get<Shape>();
    model.class_count = h.at("class_count").get<std::size_t>();
    model.epsilon = h.at("epsilon").get<double>();
    model.seed = h.at("seed").get<std::uint64_t>();
    bn_count = h.at("bn_layer_count").get<std::size_t>();
    for (const auto& l : h.at("layers")) model.layers.push_back(layer_from_json(l));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::bad_format, std::string("malformed checkpoint header: ") + e.what());
  }
  for (const auto& a : decoded.arrays) {
    if (a.name.rfind("bn", 0) == 0) continue;
    model.parameters.emplace(a.name, Tensor(a.shape, a.data));
  }
  for (std::size_t k = 0; k < bn_count; ++k)
    model.bn_source_stats.push_back(
        {decoded.array(stat_name(k, "running_mean")).data, decoded.array(stat_name(k, "running_var")).data});
  require(model.bn_layer_count() == bn_count, ErrorKind::bad_format, "header BN layer count disagrees with layers");
  model.validate();
  return model;
}

void save_checkpoint(const ModelCheckpoint& model, const std::filesystem::path& path) {
  container::write_file(path, encode_checkpoint(model));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(container::read_file(path));
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checkpoint_digest(const ModelCheckpoint& model) { return fnv1a64(encode_checkpoint(model)); }

}  // namespace ttnlab
