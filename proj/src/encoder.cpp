#include "storm/model/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace storm::inline STORM_PREC_NS {

void EncoderConfig::validate() const {
  STORM_CHECK(!depths.empty() && depths.size() <= 4, ErrorKind::kConfig,
              "encoder needs 1 to 4 stages, got ", depths.size());
  for (std::size_t s = 0; s < depths.size(); ++s)
    STORM_CHECK(depths[s] >= 1, ErrorKind::kConfig, "stage ", s + 1, " depth must be >= 1");
  STORM_CHECK(embed_dim >= 1 && d_state >= 1 && mlp_ratio >= 1, ErrorKind::kConfig,
              "embed_dim, d_state and mlp_ratio must be positive");
  STORM_CHECK(patch.total() >= 1 && window.total() >= 1, ErrorKind::kConfig,
              "patch and window sizes must be positive on every axis");
  STORM_CHECK(attention_stages <= depths.size(), ErrorKind::kConfig, "attention_stages ",
              attention_stages, " exceeds the number of stages ", depths.size());
  for (std::size_t s = 0; s < attention_stages; ++s)
    STORM_CHECK(head_dim >= 1 && stage_dim(s) % head_dim == 0, ErrorKind::kConfig,
                "stage ", s + 1, " width ", stage_dim(s), " is not a multiple of head_dim ",
                head_dim);
}

EncoderConfig variant_config(const std::string& name) {
  EncoderConfig c;
  c.variant = name;
  if (name == "Base") return c;
  if (name == "LowRes") {
    c.patch = {1, 4, 4, 4};
    return c;
  }
  if (name == "LongSeq") {
    c.window = {8, 2, 2, 2};
    return c;
  }
  if (name == "Large") {
    c.embed_dim = 48;
    c.depths = {2, 2, 4, 2};
    return c;
  }
  fail(ErrorKind::kConfig, "unknown variant '", name, "' (expected LowRes, LongSeq, Base or Large)");
}

Tensor volume_tensor(const Volume4D& v) {
  std::vector<Scalar> data(v.data.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<Scalar>(v.data[i]);
  return Tensor({v.dims.t, v.dims.z, v.dims.y, v.dims.x}, std::move(data));
}

PatchGrid make_patch_grid(const Grid4& vol, const Grid4& patch) {
  STORM_CHECK(vol.total() > 0 && patch.total() > 0, ErrorKind::kConfig,
              "patch grid: empty volume or patch");
  PatchGrid pg;
  pg.volume = vol;
  pg.patch = patch;
  auto up = [](std::size_t n, std::size_t p) { return (n + p - 1) / p; };
  pg.grid = {up(vol.t, patch.t), up(vol.x, patch.x), up(vol.y, patch.y), up(vol.z, patch.z)};
  const std::size_t P = patch.total();
  pg.voxels.assign(pg.n_tokens() * P, -1);
  pg.valid.assign(pg.n_tokens(), 0);
  for (std::size_t id = 0; id < pg.n_tokens(); ++id) {
    const Coord4 c = token_coord(pg.grid, id);
    std::size_t k = id * P;
    for (std::size_t pt = 0; pt < patch.t; ++pt)
      for (std::size_t pz = 0; pz < patch.z; ++pz)
        for (std::size_t py = 0; py < patch.y; ++py)
          for (std::size_t px = 0; px < patch.x; ++px, ++k) {
            const std::size_t t = c.t * patch.t + pt, x = c.x * patch.x + px,
                              y = c.y * patch.y + py, z = c.z * patch.z + pz;
            if (t >= vol.t || x >= vol.x || y >= vol.y || z >= vol.z) continue;
            pg.voxels[k] = static_cast<ops::Index>(((t * vol.z + z) * vol.y + y) * vol.x + x);
            pg.valid[id] = 1;
          }
  }
  return pg;
}

Tensor patchify(const Tensor& volume, const PatchGrid& pg) {
  STORM_CHECK(volume.numel() == pg.volume.total(), ErrorKind::kDimension,
              "patchify: volume ", shape_str(volume.shape()), " does not match patch grid");
  return ops::reshape(ops::index_rows(ops::reshape(volume, {volume.numel(), 1}), pg.voxels),
                      {pg.n_tokens(), pg.patch_len()});
}

Tensor positional_encoding(const Grid4& grid, std::size_t dim) {
  const std::size_t F = dim / 8;
  const std::size_t N = grid.total();
  std::vector<Scalar> pe(N * dim, Scalar{0});
  if (F == 0) return Tensor({N, dim}, std::move(pe));
  std::vector<double> freq(F);
  for (std::size_t f = 0; f < F; ++f)
    freq[f] = std::pow(10000.0, -static_cast<double>(f) / static_cast<double>(F));
  for (std::size_t id = 0; id < N; ++id) {
    const Coord4 c = token_coord(grid, id);
    const std::size_t pos[4] = {c.t, c.x, c.y, c.z};
    Scalar* row = pe.data() + id * dim;
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t f = 0; f < F; ++f) {
        const double arg = static_cast<double>(pos[a]) * freq[f];
        row[a * 2 * F + 2 * f] = static_cast<Scalar>(std::sin(arg));
        row[a * 2 * F + 2 * f + 1] = static_cast<Scalar>(std::cos(arg));
      }
  }
  return Tensor({N, dim}, std::move(pe));
}

SwmBlock::SwmBlock(MixerKind k, std::size_t dim, const EncoderConfig& cfg, bool odd, Rng& rng)
    : kind(k), shifted(odd), reverse_scan(odd), window(cfg.window), norm1(dim), norm2(dim) {
  if (kind == MixerKind::kAttention)
    attn = AttentionMixer(dim, dim / cfg.head_dim, rng);
  else
    ssm = SsmMixer(dim, cfg.d_state, rng);
  mlp = Mlp(dim, dim * cfg.mlp_ratio, rng);
}

void SwmBlock::forward(TokenState& s, AttentionHook* hook) const {
  const std::size_t N = s.n_tokens(), k = s.n_prompts;
  const Tensor xn = norm1(s.x);
  const WindowLayout layout(s.grid, window, shifted);
  Tensor mixed;

  if (kind == MixerKind::kAttention) {
    const std::size_t nW = layout.n_windows(), Lw = layout.window_len(), L = Lw + k;
    ops::IndexList gather(nW * L), scatter(nW * L);
    std::vector<std::uint8_t> key_ok(nW * L);
    AttentionWindows geo{nW, attn.heads, L, std::vector<std::int64_t>(nW * L, -1),
                         std::vector<std::int64_t>(nW * L, -1)};
    const std::size_t spatial = s.grid.spatial();
    for (std::size_t w = 0; w < nW; ++w) {
      for (std::size_t j = 0; j < Lw; ++j) {
        const ops::Index id = layout.slots()[w * Lw + j];
        const std::size_t pos = w * L + j;
        const bool live = id >= 0 && s.active[static_cast<std::size_t>(id)];
        gather[pos] = id;
        scatter[pos] = live ? id : -1;
        key_ok[pos] = live;
        if (live) {
          geo.frame[pos] = static_cast<std::int64_t>(static_cast<std::size_t>(id) / spatial);
          geo.site[pos] = static_cast<std::int64_t>(static_cast<std::size_t>(id) % spatial);
        }
      }
      for (std::size_t p = 0; p < k; ++p) {
        const std::size_t pos = w * L + Lw + p;
        gather[pos] = scatter[pos] = static_cast<ops::Index>(N + p);
        key_ok[pos] = 1;
      }
    }
    const Tensor out = attn(xn, gather, key_ok, geo, hook);
    mixed = ops::index_add_rows(out, scatter, N + k);
    if (k > 0)
      mixed = ops::concat_rows(
          ops::slice_rows(mixed, 0, N),
          ops::scale(ops::slice_rows(mixed, N, N + k), Scalar(1) / static_cast<Scalar>(nW)));
  } else {
    ops::IndexList seq;
    seq.reserve(N + k);
    for (std::size_t p = 0; p < k; ++p) seq.push_back(static_cast<ops::Index>(N + p));
    const std::size_t first = seq.size();
    for (ops::Index id : layout.slots())
      if (id >= 0 && s.active[static_cast<std::size_t>(id)]) seq.push_back(id);
    if (reverse_scan) std::reverse(seq.begin() + static_cast<std::ptrdiff_t>(first), seq.end());
    if (seq.empty()) {
      mixed = Tensor::zeros(s.x.shape());
    } else {
      mixed = ops::index_add_rows(ssm(ops::index_rows(xn, seq)), seq, N + k);
    }
  }
  s.x = ops::add(s.x, mixed);
  // Inactive rows stay zero; only live tokens and prompts go through the MLP.
  ops::IndexList live;
  live.reserve(N + k);
  for (std::size_t i = 0; i < N; ++i)
    if (s.active[i]) live.push_back(static_cast<ops::Index>(i));
  for (std::size_t p = 0; p < k; ++p) live.push_back(static_cast<ops::Index>(N + p));
  if (live.size() == N + k)
    s.x = ops::add(s.x, mlp(norm2(s.x)));
  else if (!live.empty())
    s.x = ops::add(s.x, ops::index_add_rows(mlp(norm2(ops::index_rows(s.x, live))), live, N + k));
}

void SwmBlock::zero_output_projections() const {
  if (kind == MixerKind::kAttention)
    attn.proj.zero_();
  else
    ssm.out.zero_();
  mlp.fc2.zero_();
}

void SwmBlock::collect(const std::string& prefix, ParamList& params) const {
  norm1.collect(prefix + ".norm1", params);
  if (kind == MixerKind::kAttention)
    attn.collect(prefix + ".attn", params);
  else
    ssm.collect(prefix + ".ssm", params);
  norm2.collect(prefix + ".norm2", params);
  mlp.collect(prefix + ".mlp", params);
}

PatchMerge::PatchMerge(std::size_t dim, Rng& rng) : norm(8 * dim), reduce(8 * dim, 2 * dim, false, rng) {}

TokenState PatchMerge::forward(const TokenState& s) const {
  STORM_CHECK(s.n_prompts == 0, ErrorKind::kInternal, "patch merge expects grid tokens only");
  const Grid4& g = s.grid;
  auto half = [](std::size_t n) { return (n + 1) / 2; };
  TokenState out;
  out.grid = {g.t, half(g.x), half(g.y), half(g.z)};
  const std::size_t M = out.grid.total();
  out.active.assign(M, 0);
  ops::IndexList idx(M * 8, -1);
  for (std::size_t id = 0; id < M; ++id) {
    const Coord4 c = token_coord(out.grid, id);
    std::size_t k = id * 8;
    for (std::size_t dz = 0; dz < 2; ++dz)
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx, ++k) {
          const std::size_t x = 2 * c.x + dx, y = 2 * c.y + dy, z = 2 * c.z + dz;
          if (x >= g.x || y >= g.y || z >= g.z) continue;
          const std::size_t child = token_id(g, c.t, x, y, z);
          if (!s.active[child]) continue;
          idx[k] = static_cast<ops::Index>(child);
          out.active[id] = 1;
        }
  }
  const std::size_t C = s.x.dim(1);
  out.x = reduce(norm(ops::reshape(ops::index_rows(s.x, idx), {M, 8 * C})));
  return out;
}

void PatchMerge::collect(const std::string& prefix, ParamList& params) const {
  norm.collect(prefix + ".norm", params);
  reduce.collect(prefix + ".reduce", params);
}

Encoder::Encoder(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng = Rng(config_.seed).split(0x454e43);
  const std::size_t C1 = config_.embed_dim;
  embed = Linear(config_.patch.total(), C1, true, rng);
  for (std::size_t s = 0; s < config_.n_stages(); ++s) {
    std::vector<SwmBlock> blocks;
    for (std::size_t b = 0; b < config_.depths[s]; ++b)
      blocks.emplace_back(config_.mixer(s), config_.stage_dim(s), config_, b % 2 == 1, rng);
    stages.push_back(std::move(blocks));
    if (s + 1 < config_.n_stages()) merges.emplace_back(config_.stage_dim(s), rng);
  }
  norm = LayerNorm(config_.out_dim());

  embed.collect("embed", params_);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t b = 0; b < stages[s].size(); ++b)
      stages[s][b].collect("stages." + std::to_string(s) + ".blocks." + std::to_string(b), params_);
    if (s < merges.size()) merges[s].collect("merges." + std::to_string(s), params_);
  }
  norm.collect("norm", params_);
}

std::size_t Encoder::param_count() const { return storm::param_count(params_); }

EncoderOutput Encoder::forward(const Tensor& volume, const ForwardOptions& opt) const {
  STORM_CHECK(volume.rank() == 4, ErrorKind::kDimension, "encoder expects a [T,Z,Y,X] volume, got ",
              shape_str(volume.shape()));
  const Grid4 vdims{volume.dim(0), volume.dim(3), volume.dim(2), volume.dim(1)};
  PatchGrid pg = make_patch_grid(vdims, config_.patch);
  const std::size_t N = pg.n_tokens(), P = pg.patch_len();
  std::vector<std::uint8_t> active = pg.valid;
  if (opt.visible) {
    STORM_CHECK(opt.visible->size() == N, ErrorKind::kDimension, "visibility mask has ",
                opt.visible->size(), " entries for ", N, " tokens");
    for (std::size_t i = 0; i < N; ++i)
      if (!(*opt.visible)[i]) {
        active[i] = 0;
        std::fill_n(pg.voxels.begin() + static_cast<std::ptrdiff_t>(i * P), P, -1);
      }
  }

  TokenState state;
  state.grid = pg.grid;
  state.active = std::move(active);
  state.x = ops::add(embed(patchify(volume, pg)), positional_encoding(pg.grid, config_.embed_dim));
  if (std::find(state.active.begin(), state.active.end(), 0) != state.active.end()) {
    ops::IndexList keep(N);
    for (std::size_t i = 0; i < N; ++i) keep[i] = state.active[i] ? static_cast<ops::Index>(i) : -1;
    state.x = ops::index_rows(state.x, keep);
  }

  const std::size_t k = opt.prompts ? opt.prompts->k() : 0;
  if (k > 0) {
    const PromptSet& ps = *opt.prompts;
    STORM_CHECK(ps.tokens.rank() == 2 && ps.tokens.dim(1) == config_.embed_dim, ErrorKind::kConfig,
                "prompt width ", shape_str(ps.tokens.shape()), " does not match embed dim ",
                config_.embed_dim);
    STORM_CHECK(ps.merge_proj.size() == merges.size(), ErrorKind::kConfig, "prompt set has ",
                ps.merge_proj.size(), " merge projections, encoder has ", merges.size(), " merges");
    state.x = ops::concat_rows(state.x, ps.tokens);
    state.n_prompts = k;
  }

  EncoderOutput out;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (const auto& block : stages[s]) block.forward(state, opt.hook);
    out.stages.push_back(state);
    if (s >= merges.size()) break;
    const std::size_t n = state.n_tokens();
    TokenState grid_only{k > 0 ? ops::slice_rows(state.x, 0, n) : state.x, state.grid,
                         state.active, 0};
    TokenState next = merges[s].forward(grid_only);
    if (k > 0) {
      next.x = ops::concat_rows(
          next.x, opt.prompts->merge_proj[s](ops::slice_rows(state.x, n, n + k)));
      next.n_prompts = k;
    }
    state = std::move(next);
  }

  const std::size_t n = state.n_tokens();
  const Tensor tokens = k > 0 ? ops::slice_rows(state.x, 0, n) : state.x;
  ops::IndexList live;
  for (std::size_t i = 0; i < n; ++i)
    if (state.active[i]) live.push_back(static_cast<ops::Index>(i));
  STORM_CHECK(!live.empty(), ErrorKind::kData, "encoder: no visible tokens reach the last stage");
  const Tensor pooled = ops::mean_rows(ops::index_rows(norm(tokens), live));
  out.features = ops::reshape(pooled, {1, config_.out_dim()});
  return out;
}

}  // namespace storm::inline STORM_PREC_NS
