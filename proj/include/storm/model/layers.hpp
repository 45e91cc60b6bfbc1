#pragma once

#include <string>
#include <vector>

#include "storm/core/rng.hpp"
#include "storm/tensor/ops.hpp"
#include "storm/tensor/optim.hpp"

namespace storm::inline STORM_PREC_NS {

// Ordered list of named parameters; order defines checkpoint layout and
// optimizer state indexing.
using ParamList = std::vector<NamedTensor>;

std::size_t param_count(const ParamList& params);
void set_requires_grad(const ParamList& params, bool on);
void zero_grads(const ParamList& params);

// Weight stored [in, out]; y = x W + b.
struct Linear {
  Tensor w;
  Tensor b;  // undefined when built without bias

  Linear() = default;
  // Normal weights; sd <= 0 selects 1/sqrt(in). Bias starts at zero.
  Linear(std::size_t in, std::size_t out, bool bias, Rng& rng, double sd = 0.0);

  std::size_t in_dim() const { return w.dim(0); }
  std::size_t out_dim() const { return w.dim(1); }
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  void zero_() const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Tensor operator()(const Tensor& x) const { return ops::layernorm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Mlp {
  Linear fc1;
  Linear fc2;

  Mlp() = default;
  Mlp(std::size_t dim, std::size_t hidden, Rng& rng);

  Tensor operator()(const Tensor& x) const { return fc2(ops::gelu(fc1(x))); }
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace storm::inline STORM_PREC_NS
