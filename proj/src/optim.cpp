#include "storm/tensor/optim.hpp"

#include <cmath>

namespace storm::inline STORM_PREC_NS {

void Adam::step(const std::vector<NamedTensor>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  STORM_CHECK(m_.size() == params.size(), ErrorKind::kContract,
              "Adam: parameter list changed size between steps");
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (auto g : p.tensor.grad())
      STORM_CHECK(std::isfinite(g), ErrorKind::kTraining,
                  "non-finite gradient in parameter '", p.name, "'");
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& p = params[k].tensor;
    STORM_CHECK(m_[k].size() == p.numel(), ErrorKind::kContract,
                "Adam: shape of '", params[k].name, "' changed between steps");
    if (!p.has_grad()) continue;
    auto data = p.data();
    const auto grad = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      double g = grad[i];
      if (config_.weight_decay != 0.0) g += config_.weight_decay * data[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      data[i] = static_cast<Scalar>(data[i] - config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
    p.zero_grad();
  }
}

}  // namespace storm::inline STORM_PREC_NS
