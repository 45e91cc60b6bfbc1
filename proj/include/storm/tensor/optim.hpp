#pragma once

#include <string>
#include <vector>

#include "storm/tensor/tensor.hpp"

namespace storm::inline STORM_PREC_NS {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Adam with bias correction. Moment buffers are keyed by position in the
// parameter list, so the list must be passed in the same order every step.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Applies one update using the accumulated .grad of each parameter and
  // clears the gradients. Parameters without a gradient count as zero-grad.
  void step(const std::vector<NamedTensor>& params);

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace storm::inline STORM_PREC_NS
