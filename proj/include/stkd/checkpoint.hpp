#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "stkd/datahub.hpp"
#include "stkd/model.hpp"

namespace stkd {

inline constexpr const char* kCheckpointFormat = "stkd-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string role;  // teacher, student, pruned, ...
  StgcnModel model;
  ZScore stats;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json mask_to_json(const MaskSet& m);
MaskSet mask_from_json(const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws MissingArtifactError if the file is absent, DataFormatError if it is malformed or of an
/// unsupported version.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stkd
