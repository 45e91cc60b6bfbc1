#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "storm/core/error.hpp"

namespace storm::inline STORM_PREC_NS {

struct Dims4 {
  std::size_t t = 1, x = 1, y = 1, z = 1;

  std::size_t spatial() const { return x * y * z; }
  std::size_t total() const { return t * x * y * z; }
  bool operator==(const Dims4&) const = default;
};

// 4-D scalar field stored t-major, then z, y, x (x fastest) -- the same
// layout as a NIfTI payload.
struct Volume4D {
  Dims4 dims;
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  double tr_seconds = 1.0;
  std::vector<double> data;

  Volume4D() = default;
  Volume4D(Dims4 d, std::array<double, 3> spacing, double tr)
      : dims(d), spacing_mm(spacing), tr_seconds(tr), data(d.total(), 0.0) {}

  std::size_t index(std::size_t t, std::size_t x, std::size_t y, std::size_t z) const {
    return ((t * dims.z + z) * dims.y + y) * dims.x + x;
  }
  double& at(std::size_t t, std::size_t x, std::size_t y, std::size_t z) {
    return data[index(t, x, y, z)];
  }
  double at(std::size_t t, std::size_t x, std::size_t y, std::size_t z) const {
    return data[index(t, x, y, z)];
  }

  // Throws a data error if dims/spacing/TR are non-positive or any voxel
  // is non-finite.
  void validate() const;
};

struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// Integer label image over the spatial grid; 0 is background.
struct LabelVolume {
  std::array<std::size_t, 3> dims{1, 1, 1};
  std::vector<int> labels;
  int n_rois = 0;

  void validate() const;
};

struct ConnectivityMatrix {
  Matrix r;  // Pearson correlations
  Matrix z;  // Fisher z = atanh(clamped r)
};

}  // namespace storm::inline STORM_PREC_NS
