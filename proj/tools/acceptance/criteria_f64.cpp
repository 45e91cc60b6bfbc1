#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "criteria.hpp"
#include "storm/harness/harness.hpp"
#include "storm/io/nifti.hpp"
#include "storm/pretrain/mae.hpp"
#include "storm/prompt/prompt.hpp"
#include "storm/tensor/gradcheck.hpp"

namespace acceptance::dbl {

using namespace storm;
namespace o = storm::ops;

static_assert(kDoublePrecision, "this unit checks the 64-bit core");

namespace {

template <class... A>
std::string str(const A&... a) {
  std::ostringstream s;
  s.precision(3);
  (s << ... << a);
  return s.str();
}

Tensor randn(Rng& rng, Shape shape, double sd = 1.0) {
  std::vector<Scalar> v(shape_numel(shape));
  for (auto& x : v) x = sd * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(Scalar)) == 0;
}

// ---- attention windows for the dropout rule ----------------------------

struct Window {
  std::vector<std::int64_t> frame, site;  // -1 = ineligible slot
  std::vector<double> probs;              // [n, n]
  std::size_t n() const { return frame.size(); }
};

// 2..3 frames over 1..27 sites, some tokens removed, a few ineligible slots,
// shuffled slot order, random-temperature softmax rows.
Window random_window(Rng& rng) {
  Window w;
  const std::size_t frames = 2 + rng.below(2), sites = 1 + rng.below(27);
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t s = 0; s < sites; ++s)
      if (!rng.bernoulli(0.1)) {
        w.frame.push_back(static_cast<std::int64_t>(f));
        w.site.push_back(static_cast<std::int64_t>(s));
      }
  for (std::size_t e = rng.below(4); e > 0; --e) {
    w.frame.push_back(-1);
    w.site.push_back(-1);
  }
  for (std::size_t i = w.n(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(w.frame[i - 1], w.frame[j]);
    std::swap(w.site[i - 1], w.site[j]);
  }
  const std::size_t n = w.n();
  const double temp = rng.uniform(0.1, 4.0);
  w.probs.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> z(n);
    for (auto& v : z) v = temp * rng.normal();
    const double m = *std::max_element(z.begin(), z.end());
    double total = 0;
    for (auto& v : z) total += (v = std::exp(v - m));
    for (std::size_t j = 0; j < n; ++j) w.probs[i * n + j] = z[j] / total;
  }
  return w;
}

bool same_frame(const Window& w, std::size_t i, std::size_t j) {
  return i != j && w.frame[i] >= 0 && w.frame[j] >= 0 && w.frame[i] == w.frame[j];
}
bool same_site(const Window& w, std::size_t i, std::size_t j) {
  return i != j && w.frame[i] >= 0 && w.frame[j] >= 0 && w.frame[i] != w.frame[j] &&
         w.site[i] == w.site[j];
}

struct RowRef {
  bool defined = false;
  double f_spat = 0, f_temp = 0;
  std::vector<double> w;
};

// Scripted evaluation straight from the (frame, site) labels.
std::vector<RowRef> reference(const Window& win) {
  const std::size_t n = win.n();
  std::vector<RowRef> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    RowRef& r = out[i];
    r.w.assign(n, 0.0);
    double ms = 0, mt = 0;
    std::size_t cs = 0, ct = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = win.probs[i * n + j];
      if (same_frame(win, i, j)) ms += p, ++cs, r.f_spat = std::max(r.f_spat, p);
      if (same_site(win, i, j)) mt += p, ++ct, r.f_temp = std::max(r.f_temp, p);
    }
    if (cs == 0 || ct == 0) continue;
    r.defined = true;
    for (std::size_t j = 0; j < n; ++j)
      if (same_frame(win, i, j) || same_site(win, i, j)) {
        const double p = win.probs[i * n + j];
        r.w[j] = 0.5 * (r.f_temp * p / ms + r.f_spat * p / mt);
      }
  }
  return out;
}

std::vector<Window> windows_for(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Window> v;
  for (int i = 0; i < 100; ++i) v.push_back(random_window(rng));
  return v;
}

constexpr std::uint64_t kWindowSeed = 2601;

}  // namespace

Outcome dropout_oracle() {
  double worst = 0;
  std::size_t entries = 0;
  for (const Window& w : windows_for(kWindowSeed)) {
    const auto got = dropout_probabilities(make_strd_context(w.probs, w.frame, w.site));
    const auto ref = reference(w);
    for (std::size_t i = 0; i < w.n(); ++i)
      for (std::size_t j = 0; j < w.n(); ++j) {
        worst = std::max(worst, std::abs(got[i * w.n() + j] - ref[i].w[j]));
        entries += ref[i].w[j] != 0.0;
      }
  }
  // Uniform rows on complete grids: W = 1/2 (1/(n s) + 1/(n t)).
  double worst_uniform = 0;
  for (std::size_t frames = 2; frames <= 3; ++frames)
    for (std::size_t sites = 2; sites <= 27; ++sites)
      for (std::size_t pads : {0, 3}) {
        Window w;
        for (std::size_t f = 0; f < frames; ++f)
          for (std::size_t s = 0; s < sites; ++s) {
            w.frame.push_back(static_cast<std::int64_t>(f));
            w.site.push_back(static_cast<std::int64_t>(s));
          }
        w.frame.resize(w.frame.size() + pads, -1);
        w.site.resize(w.site.size() + pads, -1);
        const std::size_t n = w.n();
        w.probs.assign(n * n, 1.0 / static_cast<double>(n));
        const auto got = dropout_probabilities(make_strd_context(w.probs, w.frame, w.site));
        const double nd = static_cast<double>(n), s = static_cast<double>(sites - 1),
                     t = static_cast<double>(frames - 1);
        const double expect = 0.5 * (1.0 / (nd * s) + 1.0 / (nd * t));
        for (std::size_t i = 0; i < frames * sites; ++i)
          for (std::size_t j = 0; j < frames * sites; ++j) {
            const bool eligible = same_frame(w, i, j) || same_site(w, i, j);
            worst_uniform = std::max(worst_uniform, std::abs(got[i * n + j] - (eligible ? expect : 0.0)));
          }
      }
  return {worst < 1e-10 && worst_uniform < 1e-12 && entries > 10000,
          str("max abs err ", worst, " over ", entries, " entries; uniform closed form ", worst_uniform)};
}

Outcome matching_oracle() {
  std::size_t rows = 0, mismatched = 0;
  for (const Window& w : windows_for(kWindowSeed)) {
    const StrdContext ctx = make_strd_context(w.probs, w.frame, w.site);
    const auto ref = reference(w);
    for (std::size_t i = 0; i < w.n(); ++i) {
      if (!ref[i].defined) continue;
      const auto m = matching_probabilities(ctx, i);
      mismatched += m.f_spat != ref[i].f_spat || m.f_temp != ref[i].f_temp;
      ++rows;
    }
  }
  return {mismatched == 0 && rows > 1000, str(rows, " rows, ", mismatched, " differ from brute-force maxima")};
}

// ---- gradients -----------------------------------------------------------

namespace {

struct GradSuite {
  double worst = 0;
  std::string worst_name;
  std::size_t checks = 0;
  void run(const std::string& name, const std::function<Tensor()>& f, const std::vector<Tensor>& in,
           double h = 1e-5) {
    const double e = check_gradient(f, in, h).max_rel_error;
    ++checks;
    if (e >= worst) worst = e, worst_name = name;
  }
};

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.variant = "tiny";
  c.patch = {1, 2, 2, 2};
  c.embed_dim = 4;
  c.depths = {2, 1};
  c.window = {2, 2, 2, 2};
  c.d_state = 2;
  c.mlp_ratio = 1;
  c.head_dim = 2;
  c.attention_stages = 1;
  c.seed = 5;
  return c;
}

std::vector<Tensor> with_params(std::vector<Tensor> in, const ParamList& params) {
  for (const auto& p : params) in.push_back(p.tensor);
  return in;
}

}  // namespace

Outcome gradient_suite() {
  GradSuite g;
  Rng rng(26);
  auto dot = [](const Tensor& t, const Tensor& w) { return o::sum_all(o::mul(t, w)); };

  for (const Shape& s : {Shape{5, 3}, Shape{2, 3, 4}}) {
    const Tensor a = randn(rng, s), b = randn(rng, s), w = randn(rng, s);
    const Tensor gamma = randn(rng, {s.back()}), beta = randn(rng, {s.back()});
    using Unary = Tensor (*)(const Tensor&);
    const std::pair<const char*, Unary> unary[] = {{"gelu", o::gelu},
                                                   {"silu", o::silu},
                                                   {"softplus", o::softplus},
                                                   {"softmax_rows", o::softmax_rows},
                                                   {"log_softmax_rows", o::log_softmax_rows}};
    for (const auto& [name, fn] : unary) g.run(name, [&, fn = fn] { return dot(fn(a), w); }, {a});
    g.run("add", [&] { return dot(o::add(a, b), w); }, {a, b});
    g.run("sub", [&] { return dot(o::sub(a, b), w); }, {a, b});
    g.run("mul", [&] { return dot(o::mul(a, b), w); }, {a, b});
    g.run("scale", [&] { return dot(o::scale(a, -1.3), w); }, {a});
    g.run("add_bias", [&] { return dot(o::add_bias(a, beta), w); }, {a, beta});
    g.run("layernorm", [&] { return dot(o::layernorm(a, gamma, beta), w); }, {a, gamma, beta});
    g.run("mean_all", [&] { return o::mean_all(o::mul(a, a)); }, {a});
    const Tensor wr = randn(rng, Shape(s.begin() + 1, s.end()));
    g.run("mean_rows", [&] { return dot(o::mean_rows(a), wr); }, {a});
    std::vector<std::size_t> perm(s.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i + 1) % perm.size();
    const Tensor pw = o::permute(w, perm);
    g.run("permute", [&] { return dot(o::permute(a, perm), pw); }, {a});
    const Tensor fw = o::reshape(w, {w.numel()});
    g.run("reshape", [&] { return dot(o::reshape(a, {a.numel()}), fw); }, {a});
    const o::IndexList idx{static_cast<o::Index>(s[0] - 1), 0, -1, 1, 0};
    Shape gs = s;
    gs[0] = idx.size();
    const Tensor gw = randn(rng, gs), src = randn(rng, gs);
    g.run("index_rows", [&] { return dot(o::index_rows(a, idx), gw); }, {a});
    g.run("index_add_rows", [&] { return dot(o::index_add_rows(src, idx, s[0]), w); }, {src});
    Shape cs = s;
    cs[0] *= 2;
    const Tensor cw = randn(rng, cs);
    g.run("concat_rows", [&] { return dot(o::concat_rows(a, b), cw); }, {a, b});
    Shape ss = s;
    ss[0] -= 1;
    const Tensor sw = randn(rng, ss);
    g.run("slice_rows", [&] { return dot(o::slice_rows(a, 1, s[0]), sw); }, {a});
    std::vector<std::uint8_t> m(a.numel());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = i % 4 == 1;
    g.run("mask_fill", [&] { return dot(o::mask_fill(a, m, 0.25), w); }, {a});
  }
  {
    const Tensor a = randn(rng, {4, 3}), b = randn(rng, {3, 5}), w = randn(rng, {4, 5});
    g.run("matmul", [&] { return dot(o::matmul(a, b), w); }, {a, b});
    const Tensor ba = randn(rng, {2, 4, 3}), bb = randn(rng, {2, 3, 5}), bt = randn(rng, {2, 5, 3}),
                 bw = randn(rng, {2, 4, 5});
    g.run("bmm", [&] { return dot(o::bmm(ba, bb), bw); }, {ba, bb});
    g.run("bmm_t", [&] { return dot(o::bmm(ba, bt, true), bw); }, {ba, bt});
    const Tensor nw = randn(rng, {4, 3});
    g.run("normalize_rows", [&] { return dot(o::normalize_rows(a), nw); }, {a});
    const Tensor table = randn(rng, {5, 3}), ew = randn(rng, {3, 3});
    g.run("embedding", [&] { return dot(o::embedding(table, {4, 0, 4}), ew); }, {table});
  }
  {
    const std::size_t L = 10, E = 3, N = 2;
    const Tensor u = randn(rng, {L, E}), b = randn(rng, {L, N}), c = randn(rng, {L, N}), d = randn(rng, {E});
    std::vector<Scalar> dl(L * E), al(E * N);
    for (auto& v : dl) v = std::log1p(std::exp(rng.normal() - 1.0));
    for (auto& v : al) v = rng.uniform(-1.0, 1.0);
    const Tensor delta({L, E}, dl), a_log({E, N}, al), w = randn(rng, {L, E});
    g.run("selective_scan", [&] { return dot(selective_scan(u, delta, a_log, b, c, d, 4), w); },
          {u, delta, a_log, b, c, d});
  }

  const EncoderConfig cfg = tiny_encoder();
  for (MixerKind kind : {MixerKind::kAttention, MixerKind::kSsm})
    for (bool odd : {false, true}) {
      const SwmBlock block(kind, 4, cfg, odd, rng);
      ParamList params;
      block.collect("block", params);
      const Tensor x = randn(rng, {17, 4}), w = randn(rng, {17, 4});
      g.run(kind == MixerKind::kAttention ? "swm_block_attention" : "swm_block_ssm",
            [&] {
              TokenState s{x, {2, 2, 2, 2}, std::vector<std::uint8_t>(16, 1), 1};
              s.active[3] = 0;
              block.forward(s, nullptr);
              return dot(s.x, w);
            },
            with_params({x}, params));
    }

  const Encoder enc(cfg);
  const Tensor vol = randn(rng, {2, 4, 4, 4});
  {
    std::vector<std::uint8_t> visible(16, 1);
    visible[1] = visible[10] = 0;
    const Tensor w = randn(rng, {1, cfg.out_dim()});
    g.run("encoder",
          [&] {
            ForwardOptions opt;
            opt.visible = &visible;
            const auto out = enc.forward(vol, opt);
            return o::add(dot(out.features, w), o::mean_all(o::gelu(out.stages[0].x)));
          },
          with_params({vol}, enc.params()));
  }
  {
    MaeConfig mc;
    mc.decoder_dim = 4;
    mc.decoder_mlp_ratio = 1;
    mc.mask_ratio = 0.5;
    const MaeModel mae(cfg, mc);
    const MaskPlan mask = make_mask(16, 0.5, 8);
    // Fixed dropout stream that removes at least one entry.
    Rng strd_rng(1);
    {
      NoGradScope ng;
      for (std::uint64_t s = 1; s < 200; ++s) {
        strd_rng = Rng(s);
        if (mae.forward(vol, mask, strd_rng).strd.dropped > 0) break;
      }
    }
    set_requires_grad(mae.params(), true);
    g.run("mae_loss", [&] { return mae.forward(vol, mask, strd_rng).loss; }, with_params({}, mae.params()));
    set_requires_grad(mae.params(), false);
  }
  for (HeadKind kind : {HeadKind::kClassification, HeadKind::kRegression, HeadKind::kEmbedding}) {
    const HeadSpec spec{kind, 3, kind == HeadKind::kRegression ? std::size_t{2} : std::size_t{0}};
    const PromptState st = make_prompt_state(enc, 3, spec, 9);
    const Sample s{vol, 2, {0.3, -1.2, 0.8}};
    g.run(std::string("prompt_forward_") + head_kind_name(kind),
          [&] { return task_loss(kind, task_output(enc, st, vol), s); }, with_params({}, st.params()));
  }
  return {g.worst < 1e-4, str(g.checks, " checks, max rel err ", g.worst, " (", g.worst_name, ")")};
}

// ---- scan ----------------------------------------------------------------

Outcome scan_equivalence() {
  Rng rng(64);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t L = 64, E = 1 + rng.below(8), N = 1 + rng.below(8), chunk = 1 + rng.below(24);
    const Tensor u = randn(rng, {L, E}), b = randn(rng, {L, N}), c = randn(rng, {L, N}), d = randn(rng, {E});
    std::vector<Scalar> dl(L * E), al(E * N);
    for (auto& v : dl) v = std::log1p(std::exp(rng.normal() - 1.0));
    for (auto& v : al) v = rng.uniform(-1.0, 2.0);
    const Tensor delta({L, E}, dl), a_log({E, N}, al);
    const Tensor y = selective_scan(u, delta, a_log, b, c, d, chunk);
    // h_t = exp(delta A) h_{t-1} + delta B_t u_t ; y_t = C_t h_t + D u_t
    std::vector<double> h(E * N, 0.0);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t e = 0; e < E; ++e) {
        double acc = d.at(e) * u.at(t * E + e);
        for (std::size_t n = 0; n < N; ++n) {
          const double dt = dl[t * E + e];
          double& hs = h[e * N + n];
          hs = std::exp(-dt * std::exp(al[e * N + n])) * hs + dt * b.at(t * N + n) * u.at(t * E + e);
          acc += c.at(t * N + n) * hs;
        }
        worst = std::max(worst, std::abs(y.at(t * E + e) - acc) / std::max(std::abs(acc), 1e-8));
      }
  }
  return {worst < 1e-5, str("100 cases of length 64, max rel err ", worst)};
}

// ---- windows -------------------------------------------------------------

Outcome window_mechanics() {
  Rng rng(44);
  std::size_t configs = 0, failures = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const Grid4 grid{1 + rng.below(5), 1 + rng.below(7), 1 + rng.below(6), 1 + rng.below(5)};
    const Grid4 win{1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)};
    const WindowLayout layout(grid, win, trial % 2 == 1);
    const Tensor x = randn(rng, {grid.total(), 3});
    const bool ok = same_bits(layout.reverse(layout.partition(x)), x);
    failures += !ok;
    ++configs;
  }

  // Every pair of face-adjacent tokens on a 4^4 grid shares a window in the
  // regular or the shifted layout, and the shifted layout joins tokens from
  // different regular windows.
  std::size_t pairs = 0, unjoined = 0, bridges = 0;
  const Grid4 grid{4, 4, 4, 4};
  for (const Grid4& win : {Grid4{2, 2, 2, 2}, Grid4{4, 2, 2, 2}}) {
    const WindowLayout reg(grid, win, false), sh(grid, win, true);
    for (std::size_t a = 0; a < grid.total(); ++a) {
      const Coord4 c = token_coord(grid, a);
      const std::size_t coord[4] = {c.t, c.x, c.y, c.z}, extent[4] = {grid.t, grid.x, grid.y, grid.z};
      for (int axis = 0; axis < 4; ++axis) {
        if (coord[axis] + 1 >= extent[axis]) continue;
        std::size_t n[4] = {c.t, c.x, c.y, c.z};
        ++n[axis];
        const std::size_t b = token_id(grid, n[0], n[1], n[2], n[3]);
        const bool in_reg = reg.window_of(a) == reg.window_of(b);
        const bool in_sh = sh.window_of(a) == sh.window_of(b);
        unjoined += !in_reg && !in_sh;
        bridges += !in_reg && in_sh;
        ++pairs;
      }
    }
  }
  return {failures == 0 && configs >= 20 && unjoined == 0 && bridges > 0,
          str(configs, " roundtrip configs (", failures, " failed); ", pairs, " adjacent pairs, ", unjoined,
              " unjoined, ", bridges, " joined only by the shift")};
}

// ---- retrieval -----------------------------------------------------------

Outcome retrieval_protocol() {
  Rng rng(300);
  const std::size_t n = 3000, dim = 16;
  Embeddings brain{n, dim, {}}, image{n, dim, {}}, noisy{n, dim, {}};
  for (std::size_t i = 0; i < n * dim; ++i) {
    brain.values.push_back(rng.normal());
    image.values.push_back(rng.normal());
  }
  for (std::size_t i = 0; i < n * dim; ++i) noisy.values.push_back(brain.values[i] + 0.8 * rng.normal());
  RetrievalConfig rc;  // 300 queries, 30 repeats
  rc.seed = 4;
  bool ordered = true;
  auto run = [&](const Embeddings& a, const Embeddings& b, RetrievalDirection d) {
    rc.direction = d;
    const RetrievalReport r = retrieval_eval(a, b, rc);
    ordered = ordered && r.top1 <= r.top3 && r.top3 <= r.top5;
    return r;
  };
  double oracle_min = 1;
  for (auto d : {RetrievalDirection::kBrainToImage, RetrievalDirection::kImageToBrain})
    oracle_min = std::min(oracle_min, run(brain, brain, d).top1);
  const RetrievalReport chance = run(brain, image, RetrievalDirection::kBrainToImage);
  const RetrievalReport chance2 = run(brain, image, RetrievalDirection::kImageToBrain);
  run(brain, noisy, RetrievalDirection::kBrainToImage);
  run(brain, noisy, RetrievalDirection::kImageToBrain);
  const double expect = 1.0 / 300.0;
  const double dev = std::max(std::abs(chance.top1 - expect), std::abs(chance2.top1 - expect));
  return {oracle_min == 1.0 && dev <= 0.005 && ordered,
          str("oracle top-1 ", oracle_min, "; random top-1 ", chance.top1 * 100, "% / ", chance2.top1 * 100,
              "% (chance 0.333%); top-1<=top-3<=top-5 ", ordered ? "on all 6 reports" : "violated")};
}

// ---- clips ---------------------------------------------------------------

Outcome frame_windows() {
  std::size_t failures = 0;
  std::string worst;
  for (std::size_t T : {25, 40, 100}) {
    // Frame f holds the constant value f + 1 at every voxel.
    std::vector<Scalar> v;
    for (std::size_t f = 0; f < T; ++f) v.insert(v.end(), 2 * 3 * 2, static_cast<Scalar>(f + 1));
    const Tensor vol({T, 2, 3, 2}, v);
    auto expected = [&](std::size_t start) {
      std::vector<std::size_t> e;
      for (std::size_t i = 0; i < 40; ++i) e.push_back((start + i) % T);
      return e;
    };
    auto matches = [&](const Tensor& clip, const std::vector<std::size_t>& frames) {
      if (clip.shape() != Shape{40, 2, 3, 2}) return false;
      for (std::size_t i = 0; i < 40; ++i)
        for (std::size_t j = 0; j < 12; ++j)
          if (clip.at(i * 12 + j) != static_cast<Scalar>(frames[i] + 1)) return false;
      return true;
    };
    if (!matches(frame_window_extract(vol, 40, ClipMode::kFirstEval, nullptr), expected(0))) {
      ++failures;
      worst = str("eval T=", T);
    }
    Rng rng(T);
    for (int draw = 0; draw < 50; ++draw) {
      const Tensor clip = frame_window_extract(vol, 40, ClipMode::kRandomTrain, &rng);
      const std::size_t start = static_cast<std::size_t>(clip.at(0)) - 1;
      const std::size_t max_start = T >= 40 ? T - 40 : T - 1;
      if (start > max_start || !matches(clip, expected(start))) {
        ++failures;
        worst = str("train T=", T, " start ", start);
      }
    }
  }
  // Hand-written expectation for the shortest input.
  const auto w25 = frame_window(25, 40, ClipMode::kFirstEval, nullptr);
  std::vector<std::size_t> hand;
  for (std::size_t i = 0; i < 25; ++i) hand.push_back(i);
  for (std::size_t i = 0; i < 15; ++i) hand.push_back(i);
  failures += w25 != hand;
  return {failures == 0, failures == 0 ? "k=40 clips for T=25, 40, 100 (eval and 50 train draws each) match"
                                       : str(failures, " mismatches, last ", worst)};
}

// ---- NIfTI ---------------------------------------------------------------

namespace {

// Byte-level writer sharing nothing with the library serializer.
template <class T>
void put(std::vector<std::uint8_t>& b, std::size_t off, T v, bool big) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) b[off + i] = big ? raw[sizeof(T) - 1 - i] : raw[i];
}

std::vector<std::uint8_t> write_raw(const Dims4& d, std::int16_t datatype, const std::vector<double>& values,
                                    bool big, const char magic[4], float tr) {
  const std::int16_t bitpix = datatype == 4 ? 16 : datatype == 16 ? 32 : datatype == 64 ? 64 : 8;
  std::vector<std::uint8_t> b(352, 0);
  put<std::int32_t>(b, 0, 348, big);
  const std::int16_t dim[8] = {static_cast<std::int16_t>(d.t > 1 ? 4 : 3), static_cast<std::int16_t>(d.x),
                               static_cast<std::int16_t>(d.y), static_cast<std::int16_t>(d.z),
                               static_cast<std::int16_t>(d.t), 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(b, 40 + 2 * i, dim[i], big);
  put<std::int16_t>(b, 70, datatype, big);
  put<std::int16_t>(b, 72, bitpix, big);
  const float pixdim[8] = {1, 2, 2.5f, 3, tr, 0, 0, 0};
  for (int i = 0; i < 8; ++i) put<float>(b, 76 + 4 * i, pixdim[i], big);
  put<float>(b, 108, 352.0f, big);
  b[123] = 2 | 8;  // mm, s
  std::memcpy(b.data() + 344, magic, 4);
  for (double v : values) {
    const std::size_t off = b.size();
    b.resize(off + bitpix / 8);
    if (datatype == 4) put<std::int16_t>(b, off, static_cast<std::int16_t>(v), big);
    if (datatype == 16) put<float>(b, off, static_cast<float>(v), big);
    if (datatype == 64) put<double>(b, off, v, big);
    if (datatype == 2) b[off] = static_cast<std::uint8_t>(v);
  }
  return b;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kInternal;
}

}  // namespace

Outcome nifti_parser() {
  Rng rng(11);
  std::size_t files = 0, failures = 0;
  for (int trial = 0; trial < 24; ++trial) {
    const Dims4 d{1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(5), 1 + rng.below(4)};
    const std::int16_t dt = trial % 3 == 0 ? 4 : trial % 3 == 1 ? 16 : 64;
    const bool big = trial % 2 == 1;
    std::vector<double> values(d.total());
    for (auto& v : values) {
      v = rng.normal() * 100.0;
      if (dt == 4) v = std::round(v);
      if (dt == 16) v = static_cast<float>(v);
    }
    const auto bytes = write_raw(d, dt, values, big, "n+1", 0.72f);
    const Volume4D vol = parse_nifti1(bytes);
    bool ok = vol.dims == d && std::memcmp(vol.data.data(), values.data(), values.size() * sizeof(double)) == 0;
    ok = ok && vol.tr_seconds == static_cast<double>(0.72f) && vol.spacing_mm[1] == 2.5;
    NiftiWriteOptions opt;
    opt.datatype = static_cast<NiftiDatatype>(dt);
    opt.big_endian = big;
    ok = ok && serialize_nifti1(vol, opt) == bytes;
    failures += !ok;
    ++files;
  }
  const std::vector<double> eight(8, 1.0);
  const ErrorKind magic = kind_of([&] { parse_nifti1(write_raw({1, 2, 2, 2}, 16, eight, false, "xyz", 0)); });
  const ErrorKind dtype = kind_of([&] { parse_nifti1(write_raw({1, 2, 2, 2}, 2, eight, false, "n+1", 0)); });
  const bool errors_ok = magic == ErrorKind::kFormat && dtype == ErrorKind::kUnsupported;
  return {failures == 0 && errors_ok,
          str(files, " files parsed and reserialized bitwise (", failures, " failed); bad magic -> ",
              error_kind_name(magic), ", uint8 datatype -> ", error_kind_name(dtype))};
}

}  // namespace acceptance::dbl
