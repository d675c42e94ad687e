#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stkd/config.hpp"
#include "stkd/graph.hpp"

namespace stkd {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitMissingArtifact = 3,
  kExitDiverged = 4,
};

/// Options that only some commands read.
struct CommandOptions {
  std::string role = "teacher";            // train-teacher: teacher | base
  bool traditional = false;                // prune: target-loss baseline instead of distillation-driven pruning
  std::optional<std::string> checkpoint;   // eval / bench: single checkpoint instead of all
  std::vector<std::string> models;         // export-scatter: model directories to include
  double tolerance = 0.10;                 // reproduce
};

/// Prepared dataset as reloaded from a run directory.
struct PreparedData {
  SpeedMatrix speeds;
  WeightedAdjacency adjacency;
  DatasetSplits splits;
  GraphKernel graph;
};

/// Root directory shared by every command for one data/model setup.
std::filesystem::path run_directory(const RunConfig& c);

PreparedData load_prepared(const RunConfig& c);

int cmd_prepare(const RunConfig& c, std::ostream& log);
int cmd_train_teacher(const RunConfig& c, const CommandOptions& o, std::ostream& log);
int cmd_distill(const RunConfig& c, std::ostream& log);
int cmd_prune(const RunConfig& c, const CommandOptions& o, std::ostream& log);
int cmd_eval(const RunConfig& c, const CommandOptions& o, std::ostream& log);
int cmd_bench(const RunConfig& c, const CommandOptions& o, std::ostream& log);
int cmd_export_scatter(const RunConfig& c, const CommandOptions& o, std::ostream& log);
/// Full pipeline on real data with every published preset, compared against published metrics.
int cmd_reproduce(const RunConfig& c, const CommandOptions& o, std::ostream& log);

/// Resolves the config and runs one command, mapping errors to exit codes.
int run_command(const std::string& command, const CliOverrides& cli, const CommandOptions& options,
                std::ostream& log, std::ostream& err);

}  // namespace stkd
