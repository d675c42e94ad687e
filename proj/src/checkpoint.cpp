#include "stkd/checkpoint.hpp"

#include <fstream>

#include "stkd/errors.hpp"

namespace stkd {

using nlohmann::json;

json model_config_to_json(const ModelConfig& c) {
  json blocks = json::array();
  for (const auto& b : c.blocks) blocks.push_back({b.c_in, b.c_mid, b.c_out});
  return {{"blocks", blocks},
          {"temporal_kernel", c.temporal_kernel},
          {"spatial_order", c.spatial_order},
          {"nodes", c.nodes},
          {"history", c.history},
          {"dropout", c.dropout}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  const auto& blocks = j.at("blocks");
  if (!blocks.is_array() || blocks.size() != 2) throw DataFormatError("model config needs exactly two blocks");
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& b = blocks[i];
    if (!b.is_array() || b.size() != 3) throw DataFormatError("block channels must be [c_in, c_mid, c_out]");
    c.blocks[i] = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>()};
  }
  c.temporal_kernel = j.at("temporal_kernel").get<int>();
  c.spatial_order = j.at("spatial_order").get<int>();
  c.nodes = j.at("nodes").get<int>();
  c.history = j.at("history").get<int>();
  c.dropout = j.value("dropout", 0.0);
  return c;
}

json mask_to_json(const MaskSet& m) {
  json out = json::array();
  for (const auto& t : m.tensors) out.push_back({{"name", t.name}, {"shape", t.shape}, {"keep", t.keep}});
  return out;
}

MaskSet mask_from_json(const json& j) {
  MaskSet m;
  for (const auto& t : j) {
    m.tensors.push_back({t.at("name").get<std::string>(), t.at("shape").get<std::vector<int>>(),
                         t.at("keep").get<std::vector<std::uint8_t>>()});
  }
  return m;
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  json params = json::array();
  for (const Parameter* p : ckpt.model.parameters()) {
    params.push_back({{"name", p->name}, {"shape", p->shape}, {"values", p->value}});
  }
  json j = {{"format", kCheckpointFormat},
            {"version", kCheckpointVersion},
            {"role", ckpt.role},
            {"config", model_config_to_json(ckpt.model.config())},
            {"normalization", {{"mean", ckpt.stats.mean}, {"std", ckpt.stats.std}}},
            {"parameters", params},
            {"mask", ckpt.model.mask() ? mask_to_json(*ckpt.model.mask()) : json(nullptr)},
            {"metadata", ckpt.metadata}};
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) throw DataFormatError("not a model checkpoint");
  if (!j.contains("version")) throw DataFormatError("checkpoint has no version field");
  const int version = j.at("version").get<int>();
  if (version != kCheckpointVersion) {
    throw DataFormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.role = j.value("role", "");
  ModelConfig cfg = model_config_from_json(j.at("config"));
  cfg.validate();
  ckpt.model = StgcnModel(cfg, 0);
  for (const auto& p : j.at("parameters")) {
    const auto name = p.at("name").get<std::string>();
    Parameter* dst = ckpt.model.find_parameter(name);
    if (!dst) throw DataFormatError("checkpoint tensor '" + name + "' does not belong to the model");
    auto values = p.at("values").get<std::vector<double>>();
    if (p.at("shape").get<std::vector<int>>() != dst->shape || values.size() != dst->size()) {
      throw DataFormatError("checkpoint tensor '" + name + "' has the wrong shape");
    }
    dst->value = std::move(values);
  }
  ckpt.stats.mean = j.at("normalization").at("mean").get<double>();
  ckpt.stats.std = j.at("normalization").at("std").get<double>();
  if (j.contains("mask") && !j.at("mask").is_null()) ckpt.model.apply_mask(mask_from_json(j.at("mask")));
  ckpt.metadata = j.value("metadata", json::object());
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(ckpt).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("checkpoint not found: " + path.string());
  std::ifstream in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataFormatError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  try {
    return checkpoint_from_json(j);
  } catch (const json::exception& e) {
    throw DataFormatError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace stkd
