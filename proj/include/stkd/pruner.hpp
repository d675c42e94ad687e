#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stkd/losses.hpp"
#include "stkd/model.hpp"
#include "stkd/train.hpp"

namespace stkd {

enum class Granularity { per_parameter, per_filter };

Granularity parse_granularity(const std::string& name);
std::string to_string(Granularity g);

struct PruneSchedule {
  int pruning_minibatch = 50;       // minibatches between pruning events
  double per_event_fraction = 0.05; // of each layer's original size, per event
  double target_sparsity = 0.5;
  Granularity granularity = Granularity::per_parameter;

  /// 0 < per_event_fraction <= target_sparsity <= 1, or target_sparsity == 0 (no pruning).
  void validate() const;
};

/// Running sums of (g*w)^2 per maskable tensor, plus the number of minibatches folded in.
struct KdisAccumulator {
  std::vector<std::string> names;
  std::vector<std::vector<int>> shapes;
  std::vector<std::vector<double>> sums;
  int counter = 0;

  static KdisAccumulator for_model(const StgcnModel& model);
  void reset();
  std::size_t index_of(const std::string& name) const;
};

/// Adds (g*w)^2 element-wise into tensor `index` of the accumulator; does not touch the counter.
void accumulate_kdis(KdisAccumulator& acc, std::size_t index, std::span<const double> grads,
                     std::span<const double> weights);

/// Folds one minibatch: every maskable tensor's current gradient and weight, counter + 1.
void accumulate_kdis(KdisAccumulator& acc, const StgcnModel& model);

/// Per-parameter scores stay as they are; per-filter scores are summed over each output channel
/// (last axis), returning one score per filter.
std::vector<double> group_scores(std::span<const double> scores, const std::vector<int>& shape, Granularity g);

/// Indices of the `k` lowest scores among `candidates`, ties broken by ascending index.
std::vector<std::size_t> lowest_scores(std::span<const double> scores, const std::vector<std::size_t>& candidates,
                                       std::size_t k);

struct LayerSparsity {
  std::string name;
  std::size_t masked = 0;
  std::size_t total = 0;

  double sparsity() const { return total ? static_cast<double>(masked) / static_cast<double>(total) : 0.0; }
};

struct PruneEventRecord {
  int event = 0;
  int epoch = 0;
  long minibatch = 0;
  double mean_kdis = 0.0;  // mean of the window-averaged scores over still-unmasked entries
  double overall_sparsity = 0.0;
  std::vector<LayerSparsity> layers;
};

/// True once every maskable tensor carries its target share of masked entries (or groups).
bool target_reached(const MaskSet& masks, const PruneSchedule& schedule);

/// Averages the window by pruning_minibatch, masks the lowest-scoring unmasked entries of every
/// layer (never past the target), resets the accumulator and installs the new mask on `model`.
MaskSet prune_event(StgcnModel& model, KdisAccumulator& acc, const MaskSet& masks, const PruneSchedule& schedule,
                    PruneEventRecord* record = nullptr);

struct PruneResult {
  StgcnModel model;
  MaskSet masks;
  std::vector<PruneEventRecord> events;
  std::vector<MaskSet> snapshots;   // mask after each event, when requested
  std::vector<EpochRecord> pruning_epochs;
  std::vector<EpochRecord> finetune_epochs;
};

struct PruneOptions {
  LossKind loss = LossKind::stcd;           // drives fine-tuning and KDIS during pruning
  LossKind finetune_loss = LossKind::stcd;  // final fine-tuning objective
  int finetune_epochs = 5;
  int max_epochs = 10000;                   // guard against a schedule that cannot finish
  bool keep_snapshots = false;
};

PruneResult distill_prune(const StgcnModel& teacher, const StgcnModel& base, const DatasetSplits& data,
                           const GraphKernel& graph, const TrainConfig& cfg, const PruneSchedule& schedule,
                           const LossWeights& weights, const PruneOptions& options = {});

/// Same loop driven by the target-only regression loss; no teacher involved.
PruneResult traditional_prune_baseline(const StgcnModel& base, const DatasetSplits& data, const GraphKernel& graph,
                                       const TrainConfig& cfg, const PruneSchedule& schedule, int finetune_epochs,
                                       bool keep_snapshots = false);

std::vector<LayerSparsity> layer_sparsity(const MaskSet& masks);

void write_prune_history_csv(const std::filesystem::path& path, const std::vector<PruneEventRecord>& events);

}  // namespace stkd
