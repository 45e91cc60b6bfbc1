#pragma once

#include <functional>
#include <vector>

#include "storm/tensor/tensor.hpp"

namespace storm::inline STORM_PREC_NS {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients of a scalar function against central
// differences. Error per coordinate: |analytic - numeric| / max(1, |analytic|).
// The function must rebuild its graph from the current values of `inputs`
// each time it is called. Only meaningful in the 64-bit build.
GradCheckResult check_gradient(const std::function<Tensor()>& f,
                               const std::vector<Tensor>& inputs, double h = 1e-3);

inline GradCheckResult check_gradient(const std::function<Tensor()>& f, const Tensor& x,
                                      double h = 1e-3) {
  return check_gradient(f, std::vector<Tensor>{x}, h);
}

}  // namespace storm::inline STORM_PREC_NS
