#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "stkd/tensor.hpp"

namespace stkd {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class DataFormatError : public DataError {
 public:
  using DataError::DataError;
};
class EmptyInputError : public DataError {
 public:
  using DataError::DataError;
};
class ValidationError : public DataError {
 public:
  using DataError::DataError;
};
class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
};

/// Speed readings, one row per timestep and one column per station.
struct SpeedMatrix {
  RowMatrix values;
  int interval_minutes = 5;

  int timesteps() const { return static_cast<int>(values.rows()); }
  int stations() const { return static_cast<int>(values.cols()); }
};

struct WeightedAdjacency {
  RowMatrix weights;
  double sigma_sq = 0.0;
  double epsilon = 0.0;

  int nodes() const { return static_cast<int>(weights.rows()); }
};

struct ZScore {
  double mean = 0.0;
  double std = 1.0;

  double normalize(double x) const { return (x - mean) / std; }
  double denormalize(double z) const { return z * std + mean; }
};

inline constexpr double kStdFloor = 1e-6;

/// Supervised samples. Inputs are z-scored, targets stay in original units.
struct WindowedDataset {
  Tensor inputs;               // (samples, M, N, 1)
  Tensor targets;              // (samples, h, N, 1)
  ZScore stats;
  std::vector<int> start_rows; // first input row of each sample

  int samples() const { return inputs.batch(); }
  int history() const { return inputs.time(); }
  int horizon() const { return targets.time(); }
  int nodes() const { return inputs.nodes(); }
};

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct DatasetSplits {
  WindowedDataset train;
  WindowedDataset val;
  WindowedDataset test;
  /// Start rows dropped because their target range straddles a split boundary.
  std::vector<int> purged_starts;
};

struct WaveComponent {
  double amplitude = 10.0;
  double period = 288.0;  // in timesteps
};

struct SyntheticSpec {
  int n_nodes = 10;
  int n_timesteps = 2000;
  std::uint64_t seed = 0;
  std::vector<WaveComponent> waves{{10.0, 288.0}, {4.0, 36.0}};
  double noise_std = 1.0;
  double coupling = 0.3;
  double base_speed = 60.0;
  double area_km = 10.0;
  double epsilon = 0.5;
  int interval_minutes = 5;
};

struct SyntheticData {
  SpeedMatrix speeds;
  WeightedAdjacency adjacency;
  RowMatrix distances;
  std::vector<double> phases;
};

SpeedMatrix parse_speed_csv(std::istream& in, char delimiter = ',', bool header = false);
SpeedMatrix load_speed_csv(const std::filesystem::path& path, char delimiter = ',', bool header = false);
RowMatrix load_distance_csv(const std::filesystem::path& path, char delimiter = ',', bool header = false);
void write_matrix_csv(const std::filesystem::path& path, const RowMatrix& m);

/// Replaces zero and NaN readings by linear interpolation along time, per station.
SpeedMatrix clean_speeds(const SpeedMatrix& speeds);

/// Variance of the strictly positive off-diagonal distances.
double default_sigma_sq(const RowMatrix& distances);

WeightedAdjacency build_adjacency(const RowMatrix& distances, double sigma_sq, double epsilon = 0.5);

int window_count(int rows, int history, int horizon);

ZScore fit_zscore(const RowMatrix& values);

DatasetSplits window(const SpeedMatrix& speeds, int history = 12, int horizon = 9, SplitRatios ratios = {});

/// Windows over the whole series with the given normalization; every admissible start once.
WindowedDataset make_windows(const SpeedMatrix& speeds, int history, int horizon, ZScore stats);

SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace stkd
