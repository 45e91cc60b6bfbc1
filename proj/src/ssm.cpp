#include "storm/model/ssm.hpp"

#include <cmath>

namespace storm::inline STORM_PREC_NS {

ScanForward selective_scan_forward(const ScanInputs& in, std::size_t chunk) {
  const std::size_t L = in.len, E = in.channels, N = in.state;
  STORM_CHECK(chunk >= 1, ErrorKind::kConfig, "scan chunk must be positive");
  ScanForward out;
  out.y.assign(L * E, Scalar{0});
  out.h.assign(L * E * N, Scalar{0});
  std::vector<Scalar> a(E * N);
  for (std::size_t i = 0; i < E * N; ++i) a[i] = -std::exp(in.a_log[i]);

  std::vector<Scalar> carry(E * N, Scalar{0}), local(E * N), prod(E * N);
  for (std::size_t t0 = 0; t0 < L; t0 += chunk) {
    const std::size_t t1 = std::min(L, t0 + chunk);
    std::fill(local.begin(), local.end(), Scalar{0});
    std::fill(prod.begin(), prod.end(), Scalar{1});
    for (std::size_t t = t0; t < t1; ++t) {
      const Scalar* bt = in.b.data() + t * N;
      Scalar* ht = out.h.data() + t * E * N;
      for (std::size_t e = 0; e < E; ++e) {
        const Scalar dl = in.delta[t * E + e];
        const Scalar du = dl * in.u[t * E + e];
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t k = e * N + n;
          const Scalar at = std::exp(dl * a[k]);
          local[k] = at * local[k] + du * bt[n];
          prod[k] *= at;
          ht[k] = local[k] + prod[k] * carry[k];
        }
      }
    }
    std::copy_n(out.h.data() + (t1 - 1) * E * N, E * N, carry.begin());
  }

  for (std::size_t t = 0; t < L; ++t) {
    const Scalar* ct = in.c.data() + t * N;
    const Scalar* ht = out.h.data() + t * E * N;
    for (std::size_t e = 0; e < E; ++e) {
      Scalar acc = in.d[e] * in.u[t * E + e];
      for (std::size_t n = 0; n < N; ++n) acc += ct[n] * ht[e * N + n];
      out.y[t * E + e] = acc;
    }
  }
  return out;
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a_log,
                      const Tensor& b, const Tensor& c, const Tensor& d, std::size_t chunk) {
  STORM_CHECK(u.rank() == 2 && a_log.rank() == 2, ErrorKind::kDimension,
              "selective_scan: u must be [L,E] and A_log [E,N]");
  const std::size_t L = u.dim(0), E = u.dim(1), N = a_log.dim(1);
  STORM_CHECK(delta.shape() == u.shape() && a_log.dim(0) == E &&
                  b.shape() == Shape({L, N}) && c.shape() == Shape({L, N}) &&
                  d.shape() == Shape({E}),
              ErrorKind::kDimension, "selective_scan: inconsistent shapes u ",
              shape_str(u.shape()), " delta ", shape_str(delta.shape()), " A_log ",
              shape_str(a_log.shape()), " B ", shape_str(b.shape()), " C ",
              shape_str(c.shape()), " D ", shape_str(d.shape()));
  const ScanInputs in{u.data(), delta.data(), a_log.data(), b.data(), c.data(), d.data(),
                      L, E, N};
  auto fwd = std::make_shared<ScanForward>(selective_scan_forward(in, chunk));

  const bool track = active_tape() != nullptr &&
                     (u.requires_grad() || delta.requires_grad() || a_log.requires_grad() ||
                      b.requires_grad() || c.requires_grad() || d.requires_grad());
  Tensor y({L, E}, fwd->y, track);
  if (!track) return y;

  active_tape()->record("selective_scan", [=] {
    if (!y.has_grad()) return;
    const auto gy = y.grad();
    const auto uv = u.data(), dv = delta.data(), alv = a_log.data(), bv = b.data(),
               cv = c.data(), Dv = d.data();
    const auto& h = fwd->h;
    std::vector<Scalar> gu(L * E, 0), gdl(L * E, 0), gal(E * N, 0), gb(L * N, 0),
        gc(L * N, 0), gd(E, 0);
    std::vector<Scalar> a(E * N);
    for (std::size_t k = 0; k < E * N; ++k) a[k] = -std::exp(alv[k]);
    std::vector<Scalar> ga(E * N, 0);  // dL/dA
    std::vector<Scalar> gh(E * N, 0);  // carried a_{t+1} * dL/dh_{t+1}

    for (std::size_t t = L; t-- > 0;) {
      const Scalar* ht = h.data() + t * E * N;
      const Scalar* hp = t > 0 ? h.data() + (t - 1) * E * N : nullptr;
      for (std::size_t e = 0; e < E; ++e) {
        const Scalar g = gy[t * E + e];
        const Scalar dl = dv[t * E + e];
        const Scalar ut = uv[t * E + e];
        gd[e] += g * ut;
        Scalar gut = g * Dv[e];
        Scalar gdlt = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t k = e * N + n;
          gc[t * N + n] += g * ht[k];
          const Scalar ghk = gh[k] + cv[t * N + n] * g;
          const Scalar at = std::exp(dl * a[k]);
          if (hp) {
            const Scalar gat = ghk * hp[k] * at;
            gdlt += gat * a[k];
            ga[k] += gat * dl;
          }
          gdlt += ghk * bv[t * N + n] * ut;
          gb[t * N + n] += ghk * dl * ut;
          gut += ghk * dl * bv[t * N + n];
          gh[k] = at * ghk;
        }
        gu[t * E + e] += gut;
        gdl[t * E + e] += gdlt;
      }
    }
    for (std::size_t k = 0; k < E * N; ++k) gal[k] = ga[k] * a[k];

    auto accumulate = [](const Tensor& x, const std::vector<Scalar>& g) {
      if (!x.requires_grad()) return;
      auto dst = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    };
    accumulate(u, gu);
    accumulate(delta, gdl);
    accumulate(a_log, gal);
    accumulate(b, gb);
    accumulate(c, gc);
    accumulate(d, gd);
  });
  return y;
}

SsmMixer::SsmMixer(std::size_t dim, std::size_t state, Rng& rng)
    : in_u(dim, dim, false, rng),
      in_z(dim, dim, false, rng),
      dt(dim, dim, true, rng),
      proj_b(dim, state, false, rng),
      proj_c(dim, state, false, rng),
      out(dim, dim, false, rng) {
  // S4D-real initialization of A, step sizes log-uniform in [1e-3, 1e-1].
  std::vector<Scalar> al(dim * state);
  for (std::size_t e = 0; e < dim; ++e)
    for (std::size_t n = 0; n < state; ++n)
      al[e * state + n] = static_cast<Scalar>(std::log(static_cast<double>(n + 1)));
  a_log = Tensor({dim, state}, std::move(al), true);
  d = Tensor::full({dim}, Scalar{1}, true);
  auto bias = dt.b.data();
  for (auto& v : bias) {
    const double step = std::exp(std::log(1e-3) + rng.uniform() * (std::log(1e-1) - std::log(1e-3)));
    v = static_cast<Scalar>(step + std::log(-std::expm1(-step)));
  }
}

Tensor SsmMixer::operator()(const Tensor& x) const {
  const Tensor u = ops::silu(in_u(x));
  const Tensor z = in_z(x);
  const Tensor delta = ops::softplus(dt(u));
  const Tensor y = selective_scan(u, delta, a_log, proj_b(u), proj_c(u), d);
  return out(ops::mul(y, ops::silu(z)));
}

void SsmMixer::collect(const std::string& prefix, ParamList& params) const {
  in_u.collect(prefix + ".in_u", params);
  in_z.collect(prefix + ".in_z", params);
  dt.collect(prefix + ".dt", params);
  proj_b.collect(prefix + ".proj_b", params);
  proj_c.collect(prefix + ".proj_c", params);
  params.push_back({prefix + ".a_log", a_log});
  params.push_back({prefix + ".d", d});
  out.collect(prefix + ".out", params);
}

}  // namespace storm::inline STORM_PREC_NS
