#pragma once

#include "feddis/autograd.hpp"

#include <map>
#include <string>
#include <vector>

namespace feddis {

struct AdamOptions {
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with per-parameter moment state keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// Applies one update to every named parameter using its current grad.
  /// Parameters with an empty grad are skipped.
  void step(const std::vector<std::pair<std::string, Parameter*>>& params);

  const AdamOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  long steps_taken(const std::string& name) const;

 private:
  struct Moments {
    Matrix m;
    Matrix v;
    long t = 0;
  };

  AdamOptions options_;
  std::map<std::string, Moments> state_;
};

}  // namespace feddis
