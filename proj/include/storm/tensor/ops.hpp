#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "storm/tensor/tensor.hpp"

namespace storm::inline STORM_PREC_NS::ops {

// Row index used by index_rows/index_add_rows; negative entries denote an
// all-zero (padding) row.
using Index = std::int64_t;
using IndexList = std::vector<Index>;

inline constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();

Tensor matmul(const Tensor& a, const Tensor& b);
// [B,m,k] x [B,k,n], or [B,m,k] x [B,n,k]^T when transpose_b is set.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
// Broadcasts a length-n vector over the last axis of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor gelu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);

// Normalizes over the last axis; eps sits inside the square root.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Scalar eps = Scalar(1e-5));

// Softmax over the last axis with max subtraction. Rows that are entirely
// -inf produce zeros.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// [N, ...] -> [...], mean over the leading axis.
Tensor mean_rows(const Tensor& x);

// Gathers leading-axis rows: out[i] = x[idx[i]] (zeros for negative idx).
Tensor index_rows(const Tensor& x, const IndexList& idx);
// Adjoint of index_rows: out[idx[i]] += x[i], out has n_out rows.
Tensor index_add_rows(const Tensor& x, const IndexList& idx, std::size_t n_out);
Tensor embedding(const Tensor& table, const IndexList& idx);

Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

// Entries with mask != 0 are replaced by value and receive no gradient.
Tensor mask_fill(const Tensor& x, std::span<const std::uint8_t> mask, Scalar value);

// L2-normalizes each row of a [N, d] tensor.
Tensor normalize_rows(const Tensor& x, Scalar eps = Scalar(1e-12));

}  // namespace storm::inline STORM_PREC_NS::ops
