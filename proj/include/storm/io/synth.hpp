#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "storm/io/volume.hpp"

namespace storm::inline STORM_PREC_NS {

struct SynthConfig {
  std::uint64_t seed = 0;
  Dims4 dims{32, 16, 16, 16};
  std::size_t n_latent_networks = 4;
  double noise_sd = 0.1;
  std::array<double, 3> spacing_mm{2.0, 2.0, 2.0};
  double tr_seconds = 0.8;
  // Draw spatial maps from this seed instead of `seed`, so a population
  // shares network locations while timecourses and noise differ.
  std::optional<std::uint64_t> map_seed;
  // Static loading per network added to its timecourse; missing entries are 0.
  std::vector<double> amplitudes;
};

// Ground truth behind a synthetic volume:
// volume = sum_k map_k (x) (course_k + amplitude_k) + N(0, noise_sd^2).
struct SynthResult {
  Volume4D volume;
  std::vector<std::vector<double>> spatial_maps;  // K x (X*Y*Z), x fastest
  std::vector<std::vector<double>> timecourses;   // K x T, zero mean, unit variance
  std::vector<std::array<double, 3>> centers;     // blob centres in voxel units
};

// Smooth Gaussian blobs with band-limited timecourses; deterministic per seed.
SynthResult synth_fmri(const SynthConfig& config);

}  // namespace storm::inline STORM_PREC_NS
