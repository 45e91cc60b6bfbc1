#include "storm/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace storm::inline STORM_PREC_NS::ops {

namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void record(const char* op, Tape::Backward fn) {
  active_tape()->record(op, std::move(fn));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  STORM_CHECK(a.shape() == b.shape(), ErrorKind::kDimension, op,
              ": shape mismatch ", shape_str(a.shape()), " vs ",
              shape_str(b.shape()));
}

std::size_t last_dim(const Tensor& x) {
  STORM_CHECK(x.rank() >= 1, ErrorKind::kDimension, "expected rank >= 1");
  return x.shape().back();
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xs = x.data();
  std::vector<Scalar> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  const bool track = tracking({&x});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    record(op, [x, y, deriv] {
      if (!y.has_grad()) return;
      const auto gy = y.grad();
      const auto xv = x.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * deriv(xv[i]);
    });
  }
  return y;
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Scalar* crow = c + i * n;
    const Scalar* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Scalar av = arow[p];
      if (av == Scalar{0}) continue;
      const Scalar* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T. A dot-product loop over short k does not
// vectorize, so b is transposed once and the row-update kernel is reused.
void gemm_nt(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m,
             std::size_t k, std::size_t n) {
  std::vector<Scalar> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n);
}

// c[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Scalar* arow = a + i * k;
    const Scalar* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Scalar av = arow[p];
      if (av == Scalar{0}) continue;
      Scalar* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Gradient contributions are summed in a scratch buffer and added once, so a
// backward pass adds exactly one rounded term per op to an existing gradient.
template <class Kernel>
void accumulate_product(Scalar* dst, std::size_t size, Kernel&& kernel) {
  std::vector<Scalar> tmp(size, Scalar{0});
  kernel(tmp.data());
  for (std::size_t i = 0; i < size; ++i) dst[i] += tmp[i];
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  STORM_CHECK(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
              ErrorKind::kDimension, "matmul: incompatible shapes ",
              shape_str(a.shape()), " and ", shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Scalar> out(m * n, Scalar{0});
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  const bool track = tracking({&a, &b});
  Tensor c({m, n}, std::move(out), track);
  if (track) {
    record("matmul", [a, b, c, m, k, n] {
      if (!c.has_grad()) return;
      const Scalar* gc = c.grad().data();
      if (a.requires_grad())
        accumulate_product(a.mutable_grad().data(), m * k,
                           [&](Scalar* t) { gemm_nt(gc, b.data().data(), t, m, n, k); });
      if (b.requires_grad())
        accumulate_product(b.mutable_grad().data(), k * n,
                           [&](Scalar* t) { gemm_tn(a.data().data(), gc, t, m, k, n); });
    });
  }
  return c;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  const bool ok = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                  (transpose_b ? a.dim(2) == b.dim(2) : a.dim(2) == b.dim(1));
  STORM_CHECK(ok, ErrorKind::kDimension, "bmm: incompatible shapes ",
              shape_str(a.shape()), " and ", shape_str(b.shape()),
              transpose_b ? " (b transposed)" : "");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<Scalar> out(batch * m * n, Scalar{0});
  for (std::size_t s = 0; s < batch; ++s) {
    const Scalar* ap = a.data().data() + s * m * k;
    const Scalar* bp = b.data().data() + s * k * n;
    Scalar* cp = out.data() + s * m * n;
    if (transpose_b)
      gemm_nt(ap, bp, cp, m, k, n);
    else
      gemm_nn(ap, bp, cp, m, k, n);
  }
  const bool track = tracking({&a, &b});
  Tensor c({batch, m, n}, std::move(out), track);
  if (track) {
    record("bmm", [a, b, c, batch, m, k, n, transpose_b] {
      if (!c.has_grad()) return;
      for (std::size_t s = 0; s < batch; ++s) {
        const Scalar* gc = c.grad().data() + s * m * n;
        const Scalar* ap = a.data().data() + s * m * k;
        const Scalar* bp = b.data().data() + s * k * n;
        if (a.requires_grad()) {
          Scalar* ga = a.mutable_grad().data() + s * m * k;
          accumulate_product(ga, m * k, [&](Scalar* t) {
            if (transpose_b)
              gemm_nn(gc, bp, t, m, n, k);  // dA = dC * B
            else
              gemm_nt(gc, bp, t, m, n, k);  // dA = dC * B^T
          });
        }
        if (b.requires_grad()) {
          Scalar* gb = b.mutable_grad().data() + s * k * n;
          accumulate_product(gb, k * n, [&](Scalar* t) {
            if (transpose_b)
              gemm_tn(gc, ap, t, m, n, k);  // dB[n,k] = dC^T * A
            else
              gemm_tn(ap, gc, t, m, k, n);  // dB = A^T * dC
          });
        }
      }
    });
  }
  return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<Scalar> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const bool track = tracking({&a, &b});
  Tensor c(a.shape(), std::move(out), track);
  if (track) {
    record("add", [a, b, c] {
      if (!c.has_grad()) return;
      const auto g = c.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto gt = t->mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<Scalar> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const bool track = tracking({&a, &b});
  Tensor c(a.shape(), std::move(out), track);
  if (track) {
    record("sub", [a, b, c] {
      if (!c.has_grad()) return;
      const auto g = c.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<Scalar> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const bool track = tracking({&a, &b});
  Tensor c(a.shape(), std::move(out), track);
  if (track) {
    record("mul", [a, b, c] {
      if (!c.has_grad()) return;
      const auto g = c.grad();
      const auto av = a.data(), bv = b.data();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return c;
}

Tensor scale(const Tensor& a, Scalar s) {
  return unary("scale", a, [s](Scalar v) { return v * s; }, [s](Scalar) { return s; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = last_dim(x);
  STORM_CHECK(bias.numel() == n, ErrorKind::kDimension, "add_bias: bias ",
              shape_str(bias.shape()), " does not match last axis of ",
              shape_str(x.shape()));
  std::vector<Scalar> out(x.numel());
  const auto xv = x.data(), bv = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % n];
  const bool track = tracking({&x, &bias});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    record("add_bias", [x, bias, y, n] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
      }
    });
  }
  return y;
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      "gelu", x,
      [](Scalar v) {
        const double d = v;
        return static_cast<Scalar>(0.5 * d * (1.0 + std::erf(d * kInvSqrt2)));
      },
      [](Scalar v) {
        const double d = v;
        const double cdf = 0.5 * (1.0 + std::erf(d * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * d * d);
        return static_cast<Scalar>(cdf + d * pdf);
      });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x,
      [](Scalar v) { return v / (Scalar{1} + std::exp(-v)); },
      [](Scalar v) {
        const Scalar s = Scalar{1} / (Scalar{1} + std::exp(-v));
        return s * (Scalar{1} + v * (Scalar{1} - s));
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x,
      [](Scalar v) { return v > Scalar{20} ? v : std::log1p(std::exp(v)); },
      [](Scalar v) { return Scalar{1} / (Scalar{1} + std::exp(-v)); });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  const std::size_t c = last_dim(x);
  STORM_CHECK(gamma.numel() == c && beta.numel() == c, ErrorKind::kDimension,
              "layernorm: affine params ", shape_str(gamma.shape()), "/",
              shape_str(beta.shape()), " do not match ", shape_str(x.shape()));
  const std::size_t rows = x.numel() / c;
  std::vector<Scalar> out(x.numel());
  std::vector<Scalar> xhat(x.numel());
  std::vector<Scalar> inv_std(rows);
  const auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = xv.data() + r * c;
    Scalar mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<Scalar>(c);
    Scalar var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<Scalar>(c);
    const Scalar inv = Scalar{1} / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const Scalar h = (row[j] - mean) * inv;
      xhat[r * c + j] = h;
      out[r * c + j] = h * gv[j] + bv[j];
    }
  }
  const bool track = tracking({&x, &gamma, &beta});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    record("layernorm", [x, gamma, beta, y, c, rows, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      const auto gv = gamma.data();
      if (gamma.requires_grad()) {
        auto gg = gamma.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gg[i % c] += g[i] * xhat[i];
      }
      if (beta.requires_grad()) {
        auto gb = beta.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
      }
      if (!x.requires_grad()) return;
      auto gx = x.mutable_grad();
      std::vector<Scalar> dh(c);
      for (std::size_t r = 0; r < rows; ++r) {
        Scalar mean_dh = 0, mean_dh_h = 0;
        for (std::size_t j = 0; j < c; ++j) {
          dh[j] = g[r * c + j] * gv[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * xhat[r * c + j];
        }
        mean_dh /= static_cast<Scalar>(c);
        mean_dh_h /= static_cast<Scalar>(c);
        for (std::size_t j = 0; j < c; ++j)
          gx[r * c + j] += inv_std[r] * (dh[j] - mean_dh - xhat[r * c + j] * mean_dh_h);
      }
    });
  }
  return y;
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = last_dim(x);
  const std::size_t rows = x.numel() / n;
  std::vector<Scalar> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = xv.data() + r * n;
    Scalar* o = out.data() + r * n;
    const Scalar mx = *std::max_element(row, row + n);
    if (mx == kNegInf) {
      std::fill(o, o + n, Scalar{0});
      continue;
    }
    Scalar sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(row[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
  }
  const bool track = tracking({&x});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    record("softmax_rows", [x, y, n, rows] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      const auto yv = y.data();
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        Scalar dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * yv[r * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[r * n + j] += yv[r * n + j] * (g[r * n + j] - dot);
      }
    });
  }
  return y;
}

Tensor log_softmax_rows(const Tensor& x) {
  const std::size_t n = last_dim(x);
  const std::size_t rows = x.numel() / n;
  std::vector<Scalar> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = xv.data() + r * n;
    const Scalar mx = *std::max_element(row, row + n);
    Scalar sum = 0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
    const Scalar lse = mx + std::log(sum);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = row[j] - lse;
  }
  const bool track = tracking({&x});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    record("log_softmax_rows", [x, y, n, rows] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      const auto yv = y.data();
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        Scalar gsum = 0;
        for (std::size_t j = 0; j < n; ++j) gsum += g[r * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[r * n + j] += g[r * n + j] - std::exp(yv[r * n + j]) * gsum;
      }
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  STORM_CHECK(shape_numel(shape) == x.numel(), ErrorKind::kDimension,
              "reshape: cannot view ", shape_str(x.shape()), " as ", shape_str(shape));
  const bool track = tracking({&x});
  Tensor y(std::move(shape), std::vector<Scalar>(x.data().begin(), x.data().end()), track);
  if (track) {
    record("reshape", [x, y] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return y;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.rank();
  STORM_CHECK(perm.size() == rank, ErrorKind::kDimension, "permute: ", perm.size(),
              " axes given for tensor of shape ", shape_str(x.shape()));
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    STORM_CHECK(p < rank && !seen[p], ErrorKind::kDimension,
                "permute: invalid axis permutation");
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(perm[i]);
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // src[k] = flat input offset of output element k
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> coord(rank, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += coord[i] * in_strides[perm[i]];
    src[k] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++coord[i] < out_shape[i]) break;
      coord[i] = 0;
    }
  }
  std::vector<Scalar> out(n);
  const auto xv = x.data();
  for (std::size_t k = 0; k < n; ++k) out[k] = xv[src[k]];
  const bool track = tracking({&x});
  Tensor y(std::move(out_shape), std::move(out), track);
  if (track) {
    record("permute", [x, y, src = std::move(src)] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t k = 0; k < g.size(); ++k) gx[src[k]] += g[k];
    });
  }
  return y;
}

Tensor sum_all(const Tensor& x) {
  Scalar s = 0;
  for (auto v : x.data()) s += v;
  const bool track = tracking({&x});
  Tensor y({1}, {s}, track);
  if (track) {
    record("sum_all", [x, y] {
      if (!y.has_grad()) return;
      const Scalar g = y.grad()[0];
      for (auto& v : x.mutable_grad()) v += g;
    });
  }
  return y;
}

Tensor mean_all(const Tensor& x) {
  STORM_CHECK(x.numel() > 0, ErrorKind::kDimension, "mean of empty tensor");
  return scale(sum_all(x), Scalar{1} / static_cast<Scalar>(x.numel()));
}

Tensor mean_rows(const Tensor& x) {
  STORM_CHECK(x.rank() >= 1 && x.dim(0) > 0, ErrorKind::kDimension,
              "mean_rows: empty leading axis in ", shape_str(x.shape()));
  const std::size_t rows = x.dim(0);
  const std::size_t width = x.numel() / rows;
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  if (out_shape.empty()) out_shape = {1};
  std::vector<Scalar> out(width, Scalar{0});
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < width; ++j) out[j] += xv[r * width + j];
  const Scalar inv = Scalar{1} / static_cast<Scalar>(rows);
  for (auto& v : out) v *= inv;
  const bool track = tracking({&x});
  Tensor y(std::move(out_shape), std::move(out), track);
  if (track) {
    record("mean_rows", [x, y, rows, width, inv] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j) gx[r * width + j] += g[j] * inv;
    });
  }
  return y;
}

Tensor index_rows(const Tensor& x, const IndexList& idx) {
  STORM_CHECK(x.rank() >= 1, ErrorKind::kDimension, "index_rows on scalar");
  const std::size_t rows = x.dim(0);
  const std::size_t width = rows ? x.numel() / rows : 0;
  Shape out_shape = x.shape();
  out_shape[0] = idx.size();
  std::vector<Scalar> out(idx.size() * width, Scalar{0});
  const auto xv = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0) continue;
    STORM_CHECK(static_cast<std::size_t>(idx[i]) < rows, ErrorKind::kDimension,
                "index_rows: index ", idx[i], " out of range for ", rows, " rows");
    std::copy_n(xv.data() + idx[i] * width, width, out.data() + i * width);
  }
  const bool track = tracking({&x});
  Tensor y(std::move(out_shape), std::move(out), track);
  if (track) {
    record("index_rows", [x, y, idx, width] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        Scalar* dst = gx.data() + idx[i] * width;
        const Scalar* s = g.data() + i * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += s[j];
      }
    });
  }
  return y;
}

Tensor index_add_rows(const Tensor& x, const IndexList& idx, std::size_t n_out) {
  STORM_CHECK(x.rank() >= 1 && x.dim(0) == idx.size(), ErrorKind::kDimension,
              "index_add_rows: ", idx.size(), " indices for tensor ",
              shape_str(x.shape()));
  const std::size_t width = idx.empty() ? 0 : x.numel() / idx.size();
  Shape out_shape = x.shape();
  out_shape[0] = n_out;
  std::vector<Scalar> out(n_out * width, Scalar{0});
  const auto xv = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0) continue;
    STORM_CHECK(static_cast<std::size_t>(idx[i]) < n_out, ErrorKind::kDimension,
                "index_add_rows: index ", idx[i], " out of range for ", n_out, " rows");
    Scalar* dst = out.data() + idx[i] * width;
    for (std::size_t j = 0; j < width; ++j) dst[j] += xv[i * width + j];
  }
  const bool track = tracking({&x});
  Tensor y(std::move(out_shape), std::move(out), track);
  if (track) {
    record("index_add_rows", [x, y, idx, width] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        const Scalar* s = g.data() + idx[i] * width;
        for (std::size_t j = 0; j < width; ++j) gx[i * width + j] += s[j];
      }
    });
  }
  return y;
}

Tensor embedding(const Tensor& table, const IndexList& idx) {
  STORM_CHECK(table.rank() == 2, ErrorKind::kDimension,
              "embedding table must be 2-D, got ", shape_str(table.shape()));
  return index_rows(table, idx);
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  STORM_CHECK(a.rank() == b.rank() && a.rank() >= 1 &&
                  std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1),
              ErrorKind::kDimension, "concat_rows: incompatible shapes ",
              shape_str(a.shape()), " and ", shape_str(b.shape()));
  Shape out_shape = a.shape();
  out_shape[0] += b.dim(0);
  std::vector<Scalar> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const bool track = tracking({&a, &b});
  Tensor y(std::move(out_shape), std::move(out), track);
  if (track) {
    record("concat_rows", [a, b, y] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        const std::size_t off = a.numel();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[off + i];
      }
    });
  }
  return y;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  STORM_CHECK(x.rank() >= 1 && begin <= end && end <= x.dim(0), ErrorKind::kDimension,
              "slice_rows: range [", begin, ",", end, ") invalid for ",
              shape_str(x.shape()));
  const std::size_t width = x.dim(0) ? x.numel() / x.dim(0) : 0;
  Shape out_shape = x.shape();
  out_shape[0] = end - begin;
  std::vector<Scalar> out(x.data().begin() + begin * width, x.data().begin() + end * width);
  const bool track = tracking({&x});
  Tensor y(std::move(out_shape), std::move(out), track);
  if (track) {
    record("slice_rows", [x, y, begin, width] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[begin * width + i] += g[i];
    });
  }
  return y;
}

Tensor mask_fill(const Tensor& x, std::span<const std::uint8_t> mask, Scalar value) {
  STORM_CHECK(mask.size() == x.numel(), ErrorKind::kDimension, "mask_fill: mask of ",
              mask.size(), " entries for tensor ", shape_str(x.shape()));
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  const bool track = tracking({&x});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    std::vector<std::uint8_t> keep(mask.begin(), mask.end());
    record("mask_fill", [x, y, keep = std::move(keep)] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!keep[i]) gx[i] += g[i];
    });
  }
  return y;
}

Tensor normalize_rows(const Tensor& x, Scalar eps) {
  STORM_CHECK(x.rank() == 2, ErrorKind::kDimension, "normalize_rows expects 2-D, got ",
              shape_str(x.shape()));
  const std::size_t rows = x.dim(0), d = x.dim(1);
  std::vector<Scalar> out(x.numel());
  std::vector<Scalar> norms(rows);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    Scalar ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += xv[r * d + j] * xv[r * d + j];
    const Scalar nrm = std::sqrt(ss + eps);
    norms[r] = nrm;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] / nrm;
  }
  const bool track = tracking({&x});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    record("normalize_rows", [x, y, rows, d, norms = std::move(norms)] {
      if (!y.has_grad()) return;
      const auto g = y.grad();
      const auto yv = y.data();
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        Scalar dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * yv[r * d + j];
        for (std::size_t j = 0; j < d; ++j)
          gx[r * d + j] += (g[r * d + j] - yv[r * d + j] * dot) / norms[r];
      }
    });
  }
  return y;
}

}  // namespace storm::inline STORM_PREC_NS::ops
