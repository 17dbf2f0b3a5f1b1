#include "feddis/optim.hpp"

#include <cmath>

namespace feddis {

void Adam::step(const std::vector<std::pair<std::string, Parameter*>>& params) {
  for (const auto& [name, param] : params) {
    if (param->grad.size() == 0) continue;
    Moments& s = state_[name];
    if (s.m.size() == 0) {
      s.m = Matrix::Zero(param->value.rows(), param->value.cols());
      s.v = Matrix::Zero(param->value.rows(), param->value.cols());
    }
    ++s.t;
    s.m = options_.beta1 * s.m + (1.0 - options_.beta1) * param->grad;
    s.v = options_.beta2 * s.v + (1.0 - options_.beta2) * param->grad.cwiseProduct(param->grad);
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(s.t));
    const double step = options_.learning_rate / bc1;
    param->value.array() -=
        step * s.m.array() / ((s.v.array() / bc2).sqrt() + options_.epsilon);
  }
}

long Adam::steps_taken(const std::string& name) const {
  auto it = state_.find(name);
  return it == state_.end() ? 0 : it->second.t;
}

}  // namespace feddis
