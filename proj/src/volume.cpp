#include <cmath>

#include "storm/io/volume.hpp"

namespace storm::inline STORM_PREC_NS {

void Volume4D::validate() const {
  STORM_CHECK(dims.t > 0 && dims.x > 0 && dims.y > 0 && dims.z > 0, ErrorKind::kData,
              "volume dims must be positive");
  STORM_CHECK(data.size() == dims.total(), ErrorKind::kData, "volume holds ", data.size(),
              " values for dims ", dims.t, "x", dims.x, "x", dims.y, "x", dims.z);
  for (double s : spacing_mm)
    STORM_CHECK(s > 0.0 && std::isfinite(s), ErrorKind::kData, "voxel spacing ", s,
                " must be positive");
  STORM_CHECK(tr_seconds > 0.0 && std::isfinite(tr_seconds), ErrorKind::kData, "TR ",
              tr_seconds, " must be positive");
  for (std::size_t i = 0; i < data.size(); ++i)
    STORM_CHECK(std::isfinite(data[i]), ErrorKind::kData, "non-finite voxel value at index ", i);
}

void LabelVolume::validate() const {
  STORM_CHECK(labels.size() == dims[0] * dims[1] * dims[2], ErrorKind::kData,
              "label volume holds ", labels.size(), " values for dims ", dims[0], "x", dims[1],
              "x", dims[2]);
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_rois) + 1, 0);
  for (int l : labels) {
    STORM_CHECK(l >= 0 && l <= n_rois, ErrorKind::kData, "label ", l, " outside [0, ", n_rois,
                "]");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (int r = 1; r <= n_rois; ++r)
    STORM_CHECK(counts[static_cast<std::size_t>(r)] > 0, ErrorKind::kData, "ROI ", r,
                " has no voxels");
}

}  // namespace storm::inline STORM_PREC_NS
