#include "storm/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace storm::inline STORM_PREC_NS {

GradCheckResult check_gradient(const std::function<Tensor()>& f,
                               const std::vector<Tensor>& inputs, double h) {
  std::vector<bool> saved_flags;
  for (const auto& t : inputs) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor y = f();
    STORM_CHECK(y.numel() == 1, ErrorKind::kContract,
                "check_gradient: function output must be scalar, got ",
                shape_str(y.shape()));
    tape.backward(y);
  }
  GradCheckResult result;
  NoGradScope no_grad;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    const Tensor& x = inputs[ti];
    const std::vector<Scalar> analytic = x.has_grad()
                                             ? std::vector<Scalar>(x.grad().begin(), x.grad().end())
                                             : std::vector<Scalar>(x.numel(), Scalar{0});
    auto xs = x.data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Scalar orig = xs[i];
      xs[i] = orig + static_cast<Scalar>(h);
      const double fp = f().item();
      xs[i] = orig - static_cast<Scalar>(h);
      const double fm = f().item();
      xs[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err >= result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = ti;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    inputs[ti].set_requires_grad(saved_flags[ti]);
    inputs[ti].zero_grad();
  }
  return result;
}

}  // namespace storm::inline STORM_PREC_NS
