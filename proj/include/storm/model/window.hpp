#pragma once

#include "storm/io/volume.hpp"
#include "storm/tensor/ops.hpp"

namespace storm::inline STORM_PREC_NS {

// Token grids reuse Dims4; token id = ((t*Z + z)*Y + y)*X + x.
using Grid4 = Dims4;

inline std::size_t token_id(const Grid4& g, std::size_t t, std::size_t x, std::size_t y,
                            std::size_t z) {
  return ((t * g.z + z) * g.y + y) * g.x + x;
}

struct Coord4 {
  std::size_t t, x, y, z;
  bool operator==(const Coord4&) const = default;
};

Coord4 token_coord(const Grid4& g, std::size_t id);

// Partition of a 4-D token grid into windows, optionally after a cyclic
// shift by floor(window/2) per axis. Axes whose window covers the whole
// grid are neither split nor shifted. Windows and the slots inside each
// window are enumerated in (t, z, y, x) order, x fastest; slots past the
// grid edge are padding (-1).
class WindowLayout {
 public:
  WindowLayout(Grid4 grid, Grid4 window, bool shifted);

  const Grid4& grid() const { return grid_; }
  const Grid4& window() const { return window_; }
  const Grid4& shift() const { return shift_; }
  const Grid4& windows_per_axis() const { return count_; }
  std::size_t n_windows() const { return count_.total(); }
  std::size_t window_len() const { return window_.total(); }
  std::size_t n_tokens() const { return grid_.total(); }

  // n_windows * window_len entries: token id or -1.
  const ops::IndexList& slots() const { return slots_; }
  // Token id -> flat slot position.
  const ops::IndexList& inverse() const { return inverse_; }
  std::size_t window_of(std::size_t token) const {
    return static_cast<std::size_t>(inverse_[token]) / window_len();
  }

  // [N, C] -> [n_windows, window_len, C]; padding slots are zero.
  Tensor partition(const Tensor& tokens) const;
  // [n_windows, window_len, C] -> [N, C].
  Tensor reverse(const Tensor& windows) const;

 private:
  Grid4 grid_, window_, shift_, count_;
  ops::IndexList slots_, inverse_;
};

}  // namespace storm::inline STORM_PREC_NS
