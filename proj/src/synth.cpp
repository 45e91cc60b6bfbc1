#include "storm/io/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "storm/core/rng.hpp"

namespace storm::inline STORM_PREC_NS {

SynthResult synth_fmri(const SynthConfig& config) {
  const Dims4 d = config.dims;
  STORM_CHECK(d.t > 0 && d.x > 0 && d.y > 0 && d.z > 0, ErrorKind::kConfig,
              "synthetic dims must be positive");
  STORM_CHECK(config.noise_sd >= 0.0, ErrorKind::kConfig, "noise_sd must be non-negative");
  const std::size_t K = config.n_latent_networks;
  const std::size_t nv = d.spatial();
  const std::array<double, 3> extent{static_cast<double>(d.x), static_cast<double>(d.y),
                                     static_cast<double>(d.z)};

  Rng root(config.seed);
  Rng map_rng = config.map_seed ? Rng(*config.map_seed).split(1) : root.split(1);
  Rng course_rng = root.split(2);
  Rng noise_rng = root.split(3);

  SynthResult r;
  r.volume = Volume4D(d, config.spacing_mm, config.tr_seconds);

  // Blob centres are drawn with rejection so networks stay mostly separate.
  std::vector<std::array<double, 3>> sigmas;
  for (std::size_t k = 0; k < K; ++k) {
    std::array<double, 3> sigma{};
    for (int a = 0; a < 3; ++a) sigma[a] = std::max(0.8, extent[a] * map_rng.uniform(0.10, 0.16));
    std::array<double, 3> best{};
    double best_sep = -1.0;
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::array<double, 3> c{};
      for (int a = 0; a < 3; ++a) c[a] = (extent[a] - 1.0) * map_rng.uniform(0.15, 0.85);
      double sep = 1e300;
      for (std::size_t j = 0; j < r.centers.size(); ++j) {
        double dd = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double s = 0.5 * (sigma[a] + sigmas[j][a]);
          dd += (c[a] - r.centers[j][a]) * (c[a] - r.centers[j][a]) / (s * s);
        }
        sep = std::min(sep, std::sqrt(dd));
      }
      if (sep > best_sep) {
        best_sep = sep;
        best = c;
      }
      if (sep >= 3.0) break;
    }
    r.centers.push_back(best);
    sigmas.push_back(sigma);

    std::vector<double> map(nv);
    for (std::size_t z = 0; z < d.z; ++z)
      for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t x = 0; x < d.x; ++x) {
          const double dx = (static_cast<double>(x) - best[0]) / sigma[0];
          const double dy = (static_cast<double>(y) - best[1]) / sigma[1];
          const double dz = (static_cast<double>(z) - best[2]) / sigma[2];
          map[(z * d.y + y) * d.x + x] = std::exp(-0.5 * (dx * dx + dy * dy + dz * dz));
        }
    r.spatial_maps.push_back(std::move(map));

    // Band-limited: a few sinusoids below T/8 cycles per run.
    std::vector<double> course(d.t, 1.0);
    if (d.t >= 2) {
      const double fmax = std::max(1.0, static_cast<double>(d.t) / 8.0);
      std::fill(course.begin(), course.end(), 0.0);
      for (int c = 0; c < 3; ++c) {
        const double f = course_rng.uniform(0.5, fmax);
        const double phase = course_rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double amp = course_rng.uniform(0.5, 1.0);
        for (std::size_t t = 0; t < d.t; ++t)
          course[t] += amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) /
                                          static_cast<double>(d.t) + phase);
      }
      double mean = 0.0;
      for (double v : course) mean += v;
      mean /= static_cast<double>(d.t);
      double var = 0.0;
      for (double v : course) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / static_cast<double>(d.t));
      for (double& v : course) v = sd > 0.0 ? (v - mean) / sd : 0.0;
    }
    r.timecourses.push_back(std::move(course));
  }

  for (std::size_t t = 0; t < d.t; ++t)
    for (std::size_t i = 0; i < nv; ++i) {
      double v = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double a = k < config.amplitudes.size() ? config.amplitudes[k] : 0.0;
        v += r.spatial_maps[k][i] * (r.timecourses[k][t] + a);
      }
      r.volume.data[t * nv + i] = v;
    }
  if (config.noise_sd > 0.0)
    for (double& v : r.volume.data) v += config.noise_sd * noise_rng.normal();
  return r;
}

}  // namespace storm::inline STORM_PREC_NS
