#include "storm/model/attention.hpp"

#include <cmath>

namespace storm::inline STORM_PREC_NS {

AttentionMixer::AttentionMixer(std::size_t dim, std::size_t h, Rng& rng)
    : qkv(dim, 3 * dim, true, rng), proj(dim, dim, true, rng), heads(h) {
  STORM_CHECK(h >= 1 && dim % h == 0, ErrorKind::kConfig, "attention: dim ", dim,
              " is not divisible by ", h, " heads");
}

Tensor AttentionMixer::operator()(const Tensor& x, const ops::IndexList& gather,
                                  const std::vector<std::uint8_t>& key_ok,
                                  const AttentionWindows& geo, AttentionHook* hook) const {
  const std::size_t C = x.dim(1), H = heads, hd = C / H;
  const std::size_t W = geo.n_windows, L = geo.len;
  STORM_CHECK(gather.size() == W * L && key_ok.size() == W * L, ErrorKind::kDimension,
              "attention: gather/key mask size does not match ", W, " windows of ", L);
  const Tensor rows = ops::index_rows(x, gather);
  Tensor t = ops::reshape(qkv(rows), {W, L, 3, H, hd});
  t = ops::reshape(ops::permute(t, {2, 0, 3, 1, 4}), {3 * W * H, L, hd});
  const Tensor q = ops::slice_rows(t, 0, W * H);
  const Tensor k = ops::slice_rows(t, W * H, 2 * W * H);
  const Tensor v = ops::slice_rows(t, 2 * W * H, 3 * W * H);
  const Tensor logits =
      ops::scale(ops::bmm(q, k, true), static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(hd))));

  std::vector<std::uint8_t> drop(W * H * L * L, 0);
  for (std::size_t w = 0; w < W; ++w)
    for (std::size_t j = 0; j < L; ++j) {
      if (key_ok[w * L + j]) continue;
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < L; ++i) drop[((w * H + h) * L + i) * L + j] = 1;
    }
  if (hook) {
    NoGradScope no_grad;
    const Tensor probs = ops::softmax_rows(ops::mask_fill(logits, drop, ops::kNegInf));
    hook->drop(geo, probs.data(), drop);
  }
  const Tensor attn = ops::softmax_rows(ops::mask_fill(logits, drop, ops::kNegInf));
  if (hook) hook->observe(geo, attn.data());

  Tensor o = ops::reshape(ops::bmm(attn, v), {W, H, L, hd});
  o = ops::reshape(ops::permute(o, {0, 2, 1, 3}), {W * L, C});
  return proj(o);
}

void AttentionMixer::collect(const std::string& prefix, ParamList& params) const {
  qkv.collect(prefix + ".qkv", params);
  proj.collect(prefix + ".proj", params);
}

}  // namespace storm::inline STORM_PREC_NS
