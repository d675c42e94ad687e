#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stkd/datahub.hpp"
#include "stkd/losses.hpp"
#include "stkd/model.hpp"
#include "stkd/pruner.hpp"
#include "stkd/train.hpp"

namespace stkd {

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | files
  std::string name = "synthetic";
  std::string speeds;                // CSV, rows = timesteps, columns = stations
  std::string distances;             // CSV, square station distance matrix
  char delimiter = ',';
  bool header = false;
  bool clean = true;
  int interval_minutes = 5;
  int history = 12;
  int horizon = 9;
  SplitRatios split;
  std::optional<double> sigma_sq;    // default: variance of nonzero distances
  double epsilon = 0.5;
  SyntheticSpec synthetic;
};

/// Channel layout per role; node count comes from the data.
struct ModelRoles {
  std::array<BlockChannels, 2> teacher = ModelConfig::teacher(1).blocks;
  std::array<BlockChannels, 2> student = ModelConfig::student(1).blocks;
  std::array<BlockChannels, 2> base = ModelConfig::pruning_base(1).blocks;
  int temporal_kernel = 3;
  int spatial_order = 3;
  double dropout = 0.0;

  ModelConfig resolve(const std::array<BlockChannels, 2>& blocks, int nodes, int history) const;
};

struct PruneSettings {
  PruneSchedule schedule;
  LossWeights weights;
  TrainConfig train;
  int finetune_epochs = 5;
  LossKind finetune_loss = LossKind::stcd;
};

struct BenchSettings {
  int batch = 1140;
  int runs = 100;
  int warmup = 10;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "runs";
  std::string preset;
  DatasetConfig dataset;
  ModelRoles models;
  TrainConfig teacher_train;
  TrainConfig student_train;
  LossKind loss_kind = LossKind::stcd;
  LossWeights loss;
  PruneSettings prune;
  BenchSettings bench;
  int scatter_samples = 50;

  /// Throws ConfigError on any invariant violation.
  void validate() const;
  /// Run directory: <out>/<setup hash>-s<seed>.
  std::filesystem::path run_dir() const;
};

/// Command-line values that take precedence over the file and the preset.
struct CliOverrides {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> preset;
  std::optional<std::string> loss;
  std::optional<double> target;
  std::vector<std::string> set;  // dotted.key=value
};

nlohmann::json to_json(const RunConfig& c);
/// Strict: unknown keys and wrong types are config errors.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Names accepted by --preset.
std::vector<std::string> preset_names();
/// Hyperparameter patch for a preset, given the loss kind and pruning target in effect.
nlohmann::json preset_patch(const std::string& name, LossKind kind, double target);

/// defaults <- config file <- preset <- --set entries <- dedicated flags.
RunConfig resolve_config(const CliOverrides& cli);

/// Hash of the resolved config with seed and output location removed.
std::string config_hash(const RunConfig& c);
/// Hash of the sections every command shares (data, architectures, teacher training), so that
/// downstream commands with different loss or pruning settings land in the same run directory.
std::string setup_hash(const RunConfig& c);
/// 12 hex digits of a 64-bit FNV-1a digest.
std::string hash_string(const std::string& s);

/// Applies "a.b.c=value" to a JSON tree; value parsed as JSON, falling back to a string.
void apply_assignment(nlohmann::json& tree, const std::string& assignment);

}  // namespace stkd
