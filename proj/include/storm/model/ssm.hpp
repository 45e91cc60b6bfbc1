#pragma once

#include <span>
#include <vector>

#include "storm/model/layers.hpp"

namespace storm::inline STORM_PREC_NS {

// Inputs of the diagonal selective recurrence, per channel e and state n:
//   h_t[e,n] = exp(delta_t[e] * A[e,n]) * h_{t-1}[e,n] + delta_t[e] * B_t[n] * u_t[e]
//   y_t[e]   = sum_n C_t[n] * h_t[e,n] + D[e] * u_t[e]
// with A = -exp(A_log) and h_{-1} = 0.
struct ScanInputs {
  std::span<const Scalar> u;      // [L, E]
  std::span<const Scalar> delta;  // [L, E], positive
  std::span<const Scalar> a_log;  // [E, N]
  std::span<const Scalar> b;      // [L, N]
  std::span<const Scalar> c;      // [L, N]
  std::span<const Scalar> d;      // [E]
  std::size_t len = 0, channels = 0, state = 0;
};

struct ScanForward {
  std::vector<Scalar> y;  // [L, E]
  std::vector<Scalar> h;  // [L, E, N]
};

inline constexpr std::size_t kScanChunk = 16;

// Two-level evaluation: each chunk is scanned from a zero state while the
// running product of transitions is tracked, then the carried state is
// folded in as h_t = local_t + prod_t * h_carry.
ScanForward selective_scan_forward(const ScanInputs& in, std::size_t chunk = kScanChunk);

// Differentiable wrapper over selective_scan_forward with a hand-written
// reverse recurrence.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a_log,
                      const Tensor& b, const Tensor& c, const Tensor& d,
                      std::size_t chunk = kScanChunk);

// Selective SSM token mixer over an already-ordered sequence [L, C]:
//   u = silu(x W_u), z = x W_z, delta = softplus(u W_dt + b_dt),
//   B = u W_B, C = u W_C, out = (scan(u) * silu(z)) W_out.
struct SsmMixer {
  Linear in_u, in_z, dt, proj_b, proj_c, out;
  Tensor a_log;  // [E, N]
  Tensor d;      // [E]

  SsmMixer() = default;
  SsmMixer(std::size_t dim, std::size_t state, Rng& rng);

  std::size_t state_dim() const { return a_log.dim(1); }
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& params) const;
};

}  // namespace storm::inline STORM_PREC_NS
