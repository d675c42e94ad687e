#pragma once

#include <vector>

#include "stkd/layers.hpp"

namespace stkd {

/// Adam with the usual default moments.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  long steps() const { return step_; }

  /// One update over `params`; the list must be identical (same order) on every call.
  void step(const std::vector<Parameter*>& params);

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// lr0 * decay^floor(epoch / every), epoch counted from 0.
double scheduled_learning_rate(double lr0, double decay, int every, int epoch);

}  // namespace stkd
