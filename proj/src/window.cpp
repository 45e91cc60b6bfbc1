#include "storm/model/window.hpp"

namespace storm::inline STORM_PREC_NS {

Coord4 token_coord(const Grid4& g, std::size_t id) {
  Coord4 c{};
  c.x = id % g.x;
  id /= g.x;
  c.y = id % g.y;
  id /= g.y;
  c.z = id % g.z;
  c.t = id / g.z;
  return c;
}

WindowLayout::WindowLayout(Grid4 grid, Grid4 window, bool shifted) : grid_(grid) {
  STORM_CHECK(grid.total() > 0, ErrorKind::kConfig, "window layout: empty token grid");
  STORM_CHECK(window.total() > 0, ErrorKind::kConfig, "window layout: zero window size");
  const std::size_t g[4] = {grid.t, grid.x, grid.y, grid.z};
  const std::size_t w[4] = {window.t, window.x, window.y, window.z};
  std::size_t eff[4], s[4], n[4];
  for (int a = 0; a < 4; ++a) {
    eff[a] = std::min(w[a], g[a]);
    s[a] = shifted && w[a] < g[a] ? w[a] / 2 : 0;
    n[a] = (g[a] + eff[a] - 1) / eff[a];
  }
  window_ = {eff[0], eff[1], eff[2], eff[3]};
  shift_ = {s[0], s[1], s[2], s[3]};
  count_ = {n[0], n[1], n[2], n[3]};

  slots_.assign(n_windows() * window_len(), -1);
  inverse_.assign(grid.total(), -1);
  std::size_t pos = 0;
  for (std::size_t wt = 0; wt < n[0]; ++wt)
    for (std::size_t wz = 0; wz < n[3]; ++wz)
      for (std::size_t wy = 0; wy < n[2]; ++wy)
        for (std::size_t wx = 0; wx < n[1]; ++wx)
          for (std::size_t ot = 0; ot < eff[0]; ++ot)
            for (std::size_t oz = 0; oz < eff[3]; ++oz)
              for (std::size_t oy = 0; oy < eff[2]; ++oy)
                for (std::size_t ox = 0; ox < eff[1]; ++ox, ++pos) {
                  const std::size_t c[4] = {wt * eff[0] + ot, wx * eff[1] + ox,
                                            wy * eff[2] + oy, wz * eff[3] + oz};
                  if (c[0] >= g[0] || c[1] >= g[1] || c[2] >= g[2] || c[3] >= g[3]) continue;
                  const std::size_t id =
                      token_id(grid, (c[0] + s[0]) % g[0], (c[1] + s[1]) % g[1],
                               (c[2] + s[2]) % g[2], (c[3] + s[3]) % g[3]);
                  slots_[pos] = static_cast<ops::Index>(id);
                  inverse_[id] = static_cast<ops::Index>(pos);
                }
}

Tensor WindowLayout::partition(const Tensor& tokens) const {
  STORM_CHECK(tokens.rank() == 2 && tokens.dim(0) == n_tokens(), ErrorKind::kDimension,
              "window partition: expected ", n_tokens(), " tokens, got ",
              shape_str(tokens.shape()));
  return ops::reshape(ops::index_rows(tokens, slots_),
                      {n_windows(), window_len(), tokens.dim(1)});
}

Tensor WindowLayout::reverse(const Tensor& windows) const {
  STORM_CHECK(windows.rank() == 3 && windows.dim(0) == n_windows() &&
                  windows.dim(1) == window_len(),
              ErrorKind::kDimension, "window reverse: unexpected shape ",
              shape_str(windows.shape()));
  const std::size_t c = windows.dim(2);
  return ops::index_rows(ops::reshape(windows, {n_windows() * window_len(), c}), inverse_);
}

}  // namespace storm::inline STORM_PREC_NS
