#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "stkd/datahub.hpp"
#include "stkd/model.hpp"

namespace stkd {

struct ScatterPoint {
  std::string label;
  int sample = 0;
  double x = 0.0;
  double y = 0.0;
};

struct ScatterData {
  std::vector<ScatterPoint> points;
  std::vector<double> explained_variance_ratio;  // first two components
  int feature_dim = 0;
  int samples_used = 0;
};

/// Per-sample features: final block output averaged over channels, flattened over (time, node),
/// so networks of different widths share one feature space.
RowMatrix hidden_feature_matrix(const StgcnModel& model, const GraphKernel& graph, const Tensor& inputs);

/// Principal-component scatter of the first `sample_count` test windows for each labeled model.
/// Components are fit on the union of all models' features.
ScatterData export_hidden_projection(const std::vector<std::pair<std::string, const StgcnModel*>>& models,
                                     const GraphKernel& graph, const WindowedDataset& test, int sample_count = 50);

void write_scatter_csv(const std::filesystem::path& path, const ScatterData& data);

}  // namespace stkd
