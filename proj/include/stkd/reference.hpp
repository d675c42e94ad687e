#pragma once

#include <array>
#include <string>
#include <vector>

#include "stkd/train.hpp"

namespace stkd {

/// Published metrics at 15/30/45 minutes for one model on one dataset.
struct ReferenceRow {
  std::string dataset;  // pemsd7 | pemsd8
  std::string model;    // teacher, student-no-kd, student-<loss>, base, pruned-<pct>, traditional-<pct>
  std::array<double, 3> mape;
  std::array<double, 3> mae;
  std::array<double, 3> rmse;
};

const std::vector<ReferenceRow>& reference_rows();
const ReferenceRow* find_reference(const std::string& dataset, const std::string& model);

struct MetricComparison {
  std::string metric;
  int minutes = 0;
  double measured = 0.0;
  double reference = 0.0;
  double relative_error = 0.0;
  bool pass = false;
};

/// Compares measured metrics to a reference row at the given relative tolerance.
std::vector<MetricComparison> compare_to_reference(const HorizonMetrics& measured, const ReferenceRow& ref,
                                                   double tolerance = 0.10);

}  // namespace stkd
