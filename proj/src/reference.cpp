#include "stkd/reference.hpp"

#include <cmath>

namespace stkd {

// Pruning rows are keyed by the pruned share; the published tables label the same runs by the
// share of parameters kept (pruned 75% <-> kept 25%).
const std::vector<ReferenceRow>& reference_rows() {
  static const std::vector<ReferenceRow> rows = {
      {"pemsd7", "teacher", {5.223, 7.316, 8.739}, {2.230, 3.010, 3.565}, {4.097, 5.752, 6.834}},
      {"pemsd7", "student-no-kd", {6.423, 9.685, 12.298}, {2.666, 3.868, 4.799}, {4.649, 6.938, 8.610}},
      {"pemsd7", "student-rd_l2", {6.379, 9.661, 12.474}, {2.768, 4.214, 5.527}, {4.709, 7.185, 9.178}},
      {"pemsd7", "student-rd_kl", {6.411, 9.527, 11.894}, {2.700, 3.938, 4.918}, {4.672, 6.984, 8.657}},
      {"pemsd7", "student-ord", {6.411, 9.516, 12.104}, {2.762, 4.091, 5.221}, {4.645, 6.847, 8.569}},
      {"pemsd7", "student-tcd", {6.320, 9.411, 11.667}, {2.730, 3.966, 4.853}, {4.678, 6.899, 8.512}},
      {"pemsd7", "student-scd", {6.326, 9.193, 11.380}, {2.743, 3.957, 4.866}, {4.645, 6.853, 8.476}},
      {"pemsd7", "student-stcd", {6.078, 9.043, 11.488}, {2.615, 3.776, 4.754}, {4.537, 6.678, 8.344}},
      {"pemsd7", "pruned-97", {5.691, 8.410, 10.520}, {2.470, 3.366, 4.131}, {4.264, 6.152, 7.564}},
      {"pemsd7", "base", {5.512, 8.004, 9.988}, {2.321, 3.216, 3.896}, {4.177, 6.006, 7.341}},
      {"pemsd7", "traditional-25", {6.185, 8.981, 11.060}, {2.721, 3.889, 4.728}, {4.682, 6.947, 8.579}},
      {"pemsd7", "pruned-25", {5.950, 8.654, 10.906}, {2.544, 3.705, 4.751}, {4.406, 6.424, 8.014}},
      {"pemsd7", "traditional-50", {6.571, 9.735, 12.114}, {2.975, 4.389, 5.418}, {4.858, 7.255, 8.971}},
      {"pemsd7", "pruned-50", {6.232, 9.185, 11.419}, {2.584, 3.773, 4.723}, {4.524, 6.773, 8.448}},
      {"pemsd7", "traditional-75", {7.090, 11.746, 15.940}, {2.925, 4.635, 6.034}, {4.943, 7.759, 9.967}},
      {"pemsd7", "pruned-75", {6.275, 9.436, 12.261}, {2.644, 3.783, 4.708}, {4.586, 6.680, 8.270}},

      {"pemsd8", "teacher", {2.293, 3.239, 3.925}, {1.211, 1.665, 2.031}, {2.524, 3.501, 4.081}},
      {"pemsd8", "student-no-kd", {2.967, 4.035, 4.734}, {1.472, 1.956, 2.294}, {2.988, 4.090, 4.706}},
      {"pemsd8", "student-rd_l2", {2.812, 3.976, 4.908}, {1.426, 1.953, 2.387}, {2.839, 3.978, 4.733}},
      {"pemsd8", "student-rd_kl", {2.964, 4.179, 5.057}, {1.507, 2.125, 2.575}, {2.895, 3.971, 4.664}},
      {"pemsd8", "student-ord", {2.661, 3.717, 4.553}, {1.363, 1.885, 2.285}, {2.788, 3.862, 4.573}},
      {"pemsd8", "student-tcd", {2.509, 3.497, 4.215}, {1.296, 1.747, 2.063}, {2.665, 3.716, 4.406}},
      {"pemsd8", "student-scd", {2.619, 3.680, 4.457}, {1.355, 1.850, 2.214}, {2.722, 3.778, 4.478}},
      {"pemsd8", "student-stcd", {2.491, 3.375, 4.067}, {1.281, 1.719, 2.052}, {2.716, 3.707, 4.385}},
      {"pemsd8", "pruned-97", {2.379, 3.307, 3.961}, {1.248, 1.679, 1.990}, {2.597, 3.594, 4.193}},
      {"pemsd8", "base", {2.206, 3.028, 3.677}, {1.187, 1.592, 1.924}, {2.479, 3.434, 4.084}},
      {"pemsd8", "traditional-25", {2.438, 3.459, 4.338}, {1.279, 1.781, 2.227}, {2.615, 3.644, 4.359}},
      {"pemsd8", "pruned-25", {2.427, 3.200, 3.782}, {1.236, 1.630, 1.927}, {2.672, 3.645, 4.303}},
      {"pemsd8", "traditional-50", {2.456, 3.514, 4.449}, {1.322, 1.890, 2.397}, {2.648, 3.797, 4.685}},
      {"pemsd8", "pruned-50", {2.424, 3.310, 3.988}, {1.261, 1.693, 2.029}, {2.605, 3.550, 4.169}},
      {"pemsd8", "traditional-75", {2.530, 3.503, 4.275}, {1.335, 1.823, 2.225}, {2.715, 3.810, 4.596}},
      {"pemsd8", "pruned-75", {2.348, 3.192, 3.788}, {1.228, 1.627, 1.911}, {2.595, 3.577, 4.216}},
  };
  return rows;
}

const ReferenceRow* find_reference(const std::string& dataset, const std::string& model) {
  for (const auto& r : reference_rows()) {
    if (r.dataset == dataset && r.model == model) return &r;
  }
  return nullptr;
}

std::vector<MetricComparison> compare_to_reference(const HorizonMetrics& measured, const ReferenceRow& ref,
                                                   double tolerance) {
  static constexpr int kMinutes[3] = {15, 30, 45};
  std::vector<MetricComparison> out;
  for (int i = 0; i < 3; ++i) {
    const HorizonMetric* h = measured.at_minutes(kMinutes[i]);
    auto add = [&](const char* name, bool present, double value, double reference) {
      MetricComparison c;
      c.metric = name;
      c.minutes = kMinutes[i];
      c.reference = reference;
      c.measured = present ? value : std::nan("");
      c.relative_error = present ? std::abs(value - reference) / reference : std::nan("");
      c.pass = present && c.relative_error <= tolerance;
      out.push_back(c);
    };
    add("MAPE", h && h->mape.has_value(), h && h->mape ? *h->mape : 0.0, ref.mape[i]);
    add("MAE", h != nullptr, h ? h->mae : 0.0, ref.mae[i]);
    add("RMSE", h != nullptr, h ? h->rmse : 0.0, ref.rmse[i]);
  }
  return out;
}

}  // namespace stkd
