#include "stkd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace stkd {

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<Parameter*>& params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("Adam: parameter list changed between steps");
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = p.grad[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      p.value[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

double scheduled_learning_rate(double lr0, double decay, int every, int epoch) {
  if (every <= 0) return lr0;
  return lr0 * std::pow(decay, epoch / every);
}

}  // namespace stkd
