#include "storm/pretrain/strd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace storm::inline STORM_PREC_NS {

MaskPlan make_mask(std::size_t n, double ratio, std::uint64_t seed) {
  STORM_CHECK(ratio > 0.0 && ratio < 1.0, ErrorKind::kConfig, "mask ratio ", ratio,
              " must lie in (0, 1)");
  const auto n_masked = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  STORM_CHECK(n_masked > 0 && n_masked < n, ErrorKind::kConfig, "mask ratio ", ratio, " on ", n,
              " tokens leaves no ", n_masked == 0 ? "masked" : "visible", " tokens");
  MaskPlan plan;
  plan.ratio = ratio;
  plan.seed = seed;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed, 0x4d41534b);
  for (std::size_t i = 0; i < n_masked; ++i) std::swap(perm[i], perm[i + rng.below(n - i)]);
  plan.masked.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_masked));
  std::sort(plan.masked.begin(), plan.masked.end());
  plan.visible.assign(n, 1);
  for (auto i : plan.masked) plan.visible[i] = 0;
  return plan;
}

std::vector<double> row_softmax(std::span<const double> logits, std::size_t n) {
  std::vector<double> out(logits.size(), 0.0);
  for (std::size_t i = 0; i * n < logits.size(); ++i) {
    const double* row = logits.data() + i * n;
    const double m = *std::max_element(row, row + n);
    if (m == -std::numeric_limits<double>::infinity()) continue;
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += out[i * n + j] = std::exp(row[j] - m);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return out;
}

StrdContext make_strd_context(std::span<const double> probs, std::span<const std::int64_t> frame,
                              std::span<const std::int64_t> site) {
  const std::size_t n = frame.size();
  STORM_CHECK(site.size() == n && probs.size() == n * n, ErrorKind::kDimension,
              "STRD context: ", probs.size(), " probabilities for ", n, " slots");
  StrdContext ctx;
  ctx.n = n;
  ctx.probs.assign(probs.begin(), probs.end());
  ctx.omega_s.resize(n);
  ctx.omega_t.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (frame[i] < 0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || frame[j] < 0) continue;
      if (frame[j] == frame[i])
        ctx.omega_s[i].push_back(j);
      else if (site[j] == site[i])
        ctx.omega_t[i].push_back(j);
    }
  }
  return ctx;
}

MatchingProbabilities matching_probabilities(const StrdContext& ctx, std::size_t i) {
  STORM_CHECK(i < ctx.n, ErrorKind::kDimension, "row ", i, " outside window of ", ctx.n);
  STORM_CHECK(!ctx.omega_s[i].empty() && !ctx.omega_t[i].empty(), ErrorKind::kContract,
              "degenerate token ", i, ": empty ", ctx.omega_s[i].empty() ? "spatial" : "temporal",
              " index set");
  const double* row = ctx.probs.data() + i * ctx.n;
  MatchingProbabilities m;
  for (auto j : ctx.omega_s[i]) m.f_spat = std::max(m.f_spat, row[j]);
  for (auto j : ctx.omega_t[i]) m.f_temp = std::max(m.f_temp, row[j]);
  return m;
}

std::vector<double> dropout_probabilities(const StrdContext& ctx) {
  const std::size_t n = ctx.n;
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (ctx.omega_s[i].empty() || ctx.omega_t[i].empty()) continue;
    const double* row = ctx.probs.data() + i * n;
    const MatchingProbabilities m = matching_probabilities(ctx, i);
    double sum_s = 0, sum_t = 0;
    for (auto j : ctx.omega_s[i]) sum_s += row[j];
    for (auto j : ctx.omega_t[i]) sum_t += row[j];
    STORM_CHECK(sum_s > 0.0 && sum_t > 0.0, ErrorKind::kInternal, "STRD row ", i,
                " has a zero-mass index set");
    auto entry = [&](std::size_t j) {
      w[i * n + j] = 0.5 * (m.f_temp * row[j] / sum_s + m.f_spat * row[j] / sum_t);
    };
    for (auto j : ctx.omega_s[i]) entry(j);
    for (auto j : ctx.omega_t[i]) entry(j);
  }
  return w;
}

std::vector<double> apply_strd(std::span<const double> logits, std::span<const double> w,
                               Rng& rng, std::size_t* dropped) {
  STORM_CHECK(logits.size() == w.size(), ErrorKind::kDimension, "apply_strd: ", logits.size(),
              " logits vs ", w.size(), " probabilities");
  std::vector<double> out(logits.begin(), logits.end());
  std::size_t count = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (w[i] <= 0.0) continue;
    if (rng.bernoulli(std::min(w[i], 1.0))) {
      out[i] = -std::numeric_limits<double>::infinity();
      ++count;
    }
  }
  if (dropped) *dropped = count;
  return out;
}

void StrdHook::drop(const AttentionWindows& geo, std::span<const Scalar> probs,
                    std::span<std::uint8_t> drop) {
  if (!enabled_) return;
  const std::size_t L = geo.len;
  std::vector<double> p(L * L);
  for (std::size_t w = 0; w < geo.n_windows; ++w) {
    const std::span<const std::int64_t> frame(geo.frame.data() + w * L, L);
    const std::span<const std::int64_t> site(geo.site.data() + w * L, L);
    for (std::size_t h = 0; h < geo.heads; ++h) {
      const std::size_t off = (w * geo.heads + h) * L * L;
      std::copy_n(probs.data() + off, L * L, p.begin());
      const StrdContext ctx = make_strd_context(p, frame, site);
      const std::vector<double> wts = dropout_probabilities(ctx);
      for (std::size_t i = 0; i < L; ++i) {
        if (ctx.omega_s[i].empty() || ctx.omega_t[i].empty()) continue;
        auto visit = [&](std::size_t j) {
          const double q = wts[i * L + j];
          stats_.weight_sum += q;
          ++stats_.eligible;
          if (rng_.bernoulli(std::min(q, 1.0))) {
            drop[off + i * L + j] = 1;
            ++stats_.dropped;
          }
        };
        for (auto j : ctx.omega_s[i]) visit(j);
        for (auto j : ctx.omega_t[i]) visit(j);
      }
    }
  }
}

void StrdHook::observe(const AttentionWindows& geo, std::span<const Scalar> probs) {
  const std::size_t L = geo.len;
  for (std::size_t w = 0; w < geo.n_windows; ++w) {
    const std::int64_t* frame = geo.frame.data() + w * L;
    const std::int64_t* site = geo.site.data() + w * L;
    for (std::size_t h = 0; h < geo.heads; ++h) {
      const Scalar* blk = probs.data() + (w * geo.heads + h) * L * L;
      for (std::size_t i = 0; i < L; ++i) {
        if (frame[i] < 0) continue;
        double mass = 0;
        bool any = false;
        for (std::size_t j = 0; j < L; ++j) {
          if (j == i || frame[j] < 0) continue;
          if (frame[j] == frame[i] || site[j] == site[i]) {
            mass += blk[i * L + j];
            any = true;
          }
        }
        if (!any) continue;
        stats_.omega_mass_sum += mass;
        ++stats_.queries;
      }
    }
  }
}

}  // namespace storm::inline STORM_PREC_NS
