#pragma once

#include <array>
#include <vector>

#include "storm/io/volume.hpp"

namespace storm::inline STORM_PREC_NS {

// Trilinear resampling of each frame followed by linear resampling of each
// voxel series. Output voxel i sits at physical offset i * target spacing
// from the first input voxel; samples past the last input voxel take its
// value.
Volume4D resample_trilinear(const Volume4D& v, std::array<double, 3> target_spacing_mm,
                            double target_tr_seconds);

// Centered crop or zero-pad per spatial axis. When the size difference is
// odd, the extra voxel is padded (or removed) on the high-index side.
Volume4D crop_or_pad(const Volume4D& v, std::array<std::size_t, 3> target_xyz);

enum class NormalizeMode { kGlobalZscore, kPerVoxelZscore };

struct IntensityStats {
  NormalizeMode mode = NormalizeMode::kGlobalZscore;
  double mean = 0.0;  // global mode
  double sd = 0.0;    // global mode; 0 means the data was constant
  std::vector<double> voxel_mean;  // per-voxel mode, x fastest
  std::vector<double> voxel_sd;
};

struct NormalizedVolume {
  Volume4D volume;
  IntensityStats stats;
};

// Z-scores with population statistics. Zero-variance data (global) or
// zero-variance voxel series (per-voxel) map to 0.
NormalizedVolume normalize_intensity(const Volume4D& v, NormalizeMode mode);

// R x T matrix; row r-1 is the mean over voxels labelled r, per frame.
Matrix roi_timeseries(const Volume4D& v, const LabelVolume& atlas);

inline constexpr double kFisherClamp = 1.0 - 1e-7;

ConnectivityMatrix connectivity(const Matrix& timeseries);

struct PreprocessConfig {
  std::array<double, 3> spacing_mm{2.0, 2.0, 2.0};
  double tr_seconds = 0.8;
  std::array<std::size_t, 3> grid{16, 16, 16};
  NormalizeMode normalize = NormalizeMode::kGlobalZscore;
};

// Resample -> crop/pad -> normalize.
NormalizedVolume preprocess(const Volume4D& v, const PreprocessConfig& config);

}  // namespace storm::inline STORM_PREC_NS
