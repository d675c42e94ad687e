#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stkd/datahub.hpp"
#include "stkd/losses.hpp"
#include "stkd/model.hpp"
#include "stkd/optim.hpp"

namespace stkd {

struct TrainConfig {
  int batch_size = 50;
  double learning_rate = 1e-3;
  double lr_decay = 0.7;
  int lr_decay_every = 5;
  int epochs = 10;
  std::uint64_t seed = 0;
  std::string optimizer = "adam";

  void validate() const;
  double learning_rate_at(int epoch) const {
    return scheduled_learning_rate(learning_rate, lr_decay, lr_decay_every, epoch);
  }
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double val_rmse = 0.0;
  std::size_t routed = 0;  // node terms routed to the teacher this epoch
  std::size_t terms = 0;   // node terms seen by the routing loss this epoch
  bool routing = false;

  double teacher_ratio() const { return terms ? static_cast<double>(routed) / static_cast<double>(terms) : 0.0; }
};

struct TrainResult {
  StgcnModel model;  // best-validation weights
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_rmse = 0.0;

  /// Teacher-routed fraction over all epochs.
  double overall_teacher_ratio() const;
};

/// One minibatch gathered from a windowed dataset.
struct Minibatch {
  Tensor inputs;       // (b, M, N, 1), normalized
  RowMatrix next_step; // (b, N), normalized one-step target
};

Minibatch gather(const WindowedDataset& data, std::span<const int> indices);

/// Deterministic per-epoch minibatch order.
std::vector<std::vector<int>> epoch_batches(int samples, int batch_size, std::mt19937_64& rng);

struct StepOutcome {
  double loss = 0.0;
  std::size_t routed = 0;
  std::size_t terms = 0;
  bool routing = false;
};

/// Forward (teacher frozen, student with taps), loss, and backward; gradients are left in
/// the student's parameters, nothing is updated.
StepOutcome compute_gradients(StgcnModel& student, const StgcnModel* teacher, const Minibatch& batch,
                              const GraphKernel& graph, LossKind kind, const LossWeights& weights,
                              std::mt19937_64* dropout_rng);

/// Optimizer update followed by mask re-application.
void apply_update(StgcnModel& model, Adam& optimizer);

/// One-step RMSE in original units.
double one_step_rmse(const StgcnModel& model, const GraphKernel& graph, const WindowedDataset& data);

TrainResult train_teacher(StgcnModel model, const DatasetSplits& data, const GraphKernel& graph,
                          const TrainConfig& cfg);

TrainResult train_student_kd(StgcnModel student, const StgcnModel& teacher, const DatasetSplits& data,
                             const GraphKernel& graph, const TrainConfig& cfg, const LossWeights& weights,
                             LossKind kind);

/// Rolls the model forward `horizon` steps, feeding each prediction back as the newest input
/// graph. Input windows are normalized (S, M, N, 1); output is denormalized (S, h, N, 1).
Tensor predict_sequence(const StgcnModel& model, const GraphKernel& graph, const Tensor& windows, int horizon,
                        const ZScore& stats);

struct HorizonMetric {
  int minutes = 0;
  int step = 0;
  std::optional<double> mape;  // percent; absent when no target exceeds the MAPE floor
  double mae = 0.0;
  double rmse = 0.0;
};

struct HorizonMetrics {
  std::vector<HorizonMetric> horizons;

  const HorizonMetric* at_minutes(int minutes) const;
};

inline constexpr double kMapeFloor = 1e-3;

/// Metrics at the given forecast steps (1-based) from predictions and truths in original units.
HorizonMetrics metrics_at_steps(const Tensor& predictions, const Tensor& truth, const std::vector<int>& steps,
                                int interval_minutes);

HorizonMetrics evaluate(const StgcnModel& model, const GraphKernel& graph, const WindowedDataset& test,
                        int interval_minutes = 5, const std::vector<int>& minutes = {15, 30, 45});

struct BenchReport {
  double mean_seconds = 0.0;
  int runs = 0;
  int warmup = 0;
  int batch = 0;
  std::uint64_t flops = 0;
};

BenchReport benchmark(const StgcnModel& model, const GraphKernel& graph, int batch = 1140, int runs = 100,
                      int warmup = 10, std::uint64_t seed = 0);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, HorizonMetrics>>& rows);
std::string format_metrics_table(const std::vector<std::pair<std::string, HorizonMetrics>>& rows);

}  // namespace stkd
