#include "storm/model/layers.hpp"

#include <cmath>

namespace storm::inline STORM_PREC_NS {

std::size_t param_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void set_requires_grad(const ParamList& params, bool on) {
  for (const auto& p : params) p.tensor.set_requires_grad(on);
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) p.tensor.zero_grad();
}

Linear::Linear(std::size_t in, std::size_t out, bool bias, Rng& rng, double sd) {
  if (sd <= 0.0) sd = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<Scalar> v(in * out);
  for (auto& x : v) x = static_cast<Scalar>(sd * rng.normal());
  w = Tensor({in, out}, std::move(v), true);
  if (bias) b = Tensor::zeros({out}, true);
}

Tensor Linear::operator()(const Tensor& x) const {
  STORM_CHECK(x.rank() == 2 && x.dim(1) == in_dim(), ErrorKind::kDimension,
              "linear: input ", shape_str(x.shape()), " does not match weight ",
              shape_str(w.shape()));
  Tensor y = ops::matmul(x, w);
  return b.defined() ? ops::add_bias(y, b) : y;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w});
  if (b.defined()) out.push_back({prefix + ".b", b});
}

void Linear::zero_() const {
  std::fill(w.data().begin(), w.data().end(), Scalar{0});
  if (b.defined()) std::fill(b.data().begin(), b.data().end(), Scalar{0});
}

LayerNorm::LayerNorm(std::size_t dim)
    : gamma(Tensor::full({dim}, Scalar{1}, true)), beta(Tensor::zeros({dim}, true)) {}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

Mlp::Mlp(std::size_t dim, std::size_t hidden, Rng& rng)
    : fc1(dim, hidden, true, rng), fc2(hidden, dim, true, rng) {}

void Mlp::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

}  // namespace storm::inline STORM_PREC_NS
