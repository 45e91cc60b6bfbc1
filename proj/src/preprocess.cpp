#include "storm/io/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace storm::inline STORM_PREC_NS {

namespace {

std::size_t axis_len(const Dims4& d, int axis) {
  switch (axis) {
    case 0: return d.t;
    case 1: return d.x;
    case 2: return d.y;
    default: return d.z;
  }
}

void set_axis_len(Dims4& d, int axis, std::size_t n) {
  switch (axis) {
    case 0: d.t = n; break;
    case 1: d.x = n; break;
    case 2: d.y = n; break;
    default: d.z = n; break;
  }
}

// Stride of `axis` in the t,z,y,x layout.
std::size_t axis_stride(const Dims4& d, int axis) {
  switch (axis) {
    case 1: return 1;
    case 2: return d.x;
    case 3: return d.x * d.y;
    default: return d.x * d.y * d.z;
  }
}

// Linear interpolation along one axis; ratio = output step / input step.
Volume4D resample_axis(const Volume4D& v, int axis, double ratio) {
  const std::size_t n_in = axis_len(v.dims, axis);
  const double extent = static_cast<double>(n_in - 1) / ratio;
  const std::size_t n_out = static_cast<std::size_t>(std::floor(extent + 1e-9)) + 1;
  Dims4 od = v.dims;
  set_axis_len(od, axis, n_out);
  Volume4D out(od, v.spacing_mm, v.tr_seconds);

  struct Tap {
    std::size_t i0, i1;
    double f;
  };
  std::vector<Tap> taps(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    double u = static_cast<double>(i) * ratio;
    const double r = std::nearbyint(u);
    if (std::abs(u - r) < 1e-9) u = r;
    if (u >= static_cast<double>(n_in - 1)) {
      taps[i] = {n_in - 1, n_in - 1, 0.0};
    } else {
      const auto i0 = static_cast<std::size_t>(std::floor(u));
      taps[i] = {i0, i0 + 1, u - static_cast<double>(i0)};
    }
  }

  const std::size_t in_stride = axis_stride(v.dims, axis);
  const std::size_t out_stride = axis_stride(od, axis);
  // Iterate over all lines parallel to `axis`.
  const std::size_t inner = in_stride;               // elements below the axis
  const std::size_t outer = v.dims.total() / (inner * n_in);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < inner; ++k) {
      const double* src = v.data.data() + o * n_in * inner + k;
      double* dst = out.data.data() + o * n_out * inner + k;
      for (std::size_t i = 0; i < n_out; ++i) {
        const double a = src[taps[i].i0 * in_stride];
        const double b = src[taps[i].i1 * in_stride];
        dst[i * out_stride] = a + (b - a) * taps[i].f;
      }
    }
  }
  return out;
}

}  // namespace

Volume4D resample_trilinear(const Volume4D& v, std::array<double, 3> target_spacing_mm,
                            double target_tr_seconds) {
  v.validate();
  for (double s : target_spacing_mm)
    STORM_CHECK(s > 0.0, ErrorKind::kConfig, "target spacing ", s, " must be positive");
  STORM_CHECK(target_tr_seconds > 0.0, ErrorKind::kConfig, "target TR ", target_tr_seconds,
              " must be positive");
  Volume4D cur = v;
  for (int a = 0; a < 3; ++a) {
    if (target_spacing_mm[a] != v.spacing_mm[a])
      cur = resample_axis(cur, a + 1, target_spacing_mm[a] / v.spacing_mm[a]);
  }
  if (target_tr_seconds != v.tr_seconds)
    cur = resample_axis(cur, 0, target_tr_seconds / v.tr_seconds);
  cur.spacing_mm = target_spacing_mm;
  cur.tr_seconds = target_tr_seconds;
  return cur;
}

Volume4D crop_or_pad(const Volume4D& v, std::array<std::size_t, 3> target_xyz) {
  for (auto n : target_xyz)
    STORM_CHECK(n > 0, ErrorKind::kConfig, "crop/pad target dims must be positive");
  const std::array<std::size_t, 3> src{v.dims.x, v.dims.y, v.dims.z};
  // Signed offset: output index o maps to input index o + shift[a].
  std::array<long, 3> shift{};
  for (int a = 0; a < 3; ++a) {
    const long diff = static_cast<long>(target_xyz[a]) - static_cast<long>(src[a]);
    shift[a] = diff >= 0 ? -(diff / 2) : (-diff) / 2;
  }
  Volume4D out(Dims4{v.dims.t, target_xyz[0], target_xyz[1], target_xyz[2]}, v.spacing_mm,
               v.tr_seconds);
  for (std::size_t t = 0; t < v.dims.t; ++t)
    for (std::size_t z = 0; z < target_xyz[2]; ++z) {
      const long iz = static_cast<long>(z) + shift[2];
      if (iz < 0 || iz >= static_cast<long>(src[2])) continue;
      for (std::size_t y = 0; y < target_xyz[1]; ++y) {
        const long iy = static_cast<long>(y) + shift[1];
        if (iy < 0 || iy >= static_cast<long>(src[1])) continue;
        for (std::size_t x = 0; x < target_xyz[0]; ++x) {
          const long ix = static_cast<long>(x) + shift[0];
          if (ix < 0 || ix >= static_cast<long>(src[0])) continue;
          out.at(t, x, y, z) = v.at(t, static_cast<std::size_t>(ix), static_cast<std::size_t>(iy),
                                    static_cast<std::size_t>(iz));
        }
      }
    }
  return out;
}

NormalizedVolume normalize_intensity(const Volume4D& v, NormalizeMode mode) {
  STORM_CHECK(!v.data.empty(), ErrorKind::kData, "cannot normalize an empty volume");
  NormalizedVolume r{v, {}};
  r.stats.mode = mode;
  if (mode == NormalizeMode::kGlobalZscore) {
    double mean = 0.0;
    for (double x : v.data) mean += x;
    mean /= static_cast<double>(v.data.size());
    double var = 0.0;
    for (double x : v.data) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.data.size());
    const double sd = std::sqrt(var);
    r.stats.mean = mean;
    r.stats.sd = sd;
    for (double& x : r.volume.data) x = sd > 0.0 ? (x - mean) / sd : 0.0;
    return r;
  }
  const std::size_t nv = v.dims.spatial();
  const std::size_t nt = v.dims.t;
  r.stats.voxel_mean.assign(nv, 0.0);
  r.stats.voxel_sd.assign(nv, 0.0);
  for (std::size_t i = 0; i < nv; ++i) {
    double mean = 0.0;
    for (std::size_t t = 0; t < nt; ++t) mean += v.data[t * nv + i];
    mean /= static_cast<double>(nt);
    double var = 0.0;
    for (std::size_t t = 0; t < nt; ++t) {
      const double d = v.data[t * nv + i] - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(nt));
    r.stats.voxel_mean[i] = mean;
    r.stats.voxel_sd[i] = sd;
    for (std::size_t t = 0; t < nt; ++t) {
      double& x = r.volume.data[t * nv + i];
      x = sd > 0.0 ? (x - mean) / sd : 0.0;
    }
  }
  return r;
}

Matrix roi_timeseries(const Volume4D& v, const LabelVolume& atlas) {
  STORM_CHECK(atlas.dims == (std::array<std::size_t, 3>{v.dims.x, v.dims.y, v.dims.z}),
              ErrorKind::kData, "atlas dims ", atlas.dims[0], "x", atlas.dims[1], "x",
              atlas.dims[2], " do not match volume ", v.dims.x, "x", v.dims.y, "x", v.dims.z);
  STORM_CHECK(atlas.labels.size() == v.dims.spatial(), ErrorKind::kData,
              "atlas label count does not match its dims");
  const auto R = static_cast<std::size_t>(atlas.n_rois);
  std::vector<std::size_t> counts(R + 1, 0);
  for (int l : atlas.labels) {
    STORM_CHECK(l >= 0 && l <= atlas.n_rois, ErrorKind::kData, "label ", l, " outside [0, ",
                atlas.n_rois, "]");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t r = 1; r <= R; ++r)
    STORM_CHECK(counts[r] > 0, ErrorKind::kData, "ROI ", r, " is empty");
  const std::size_t nv = v.dims.spatial();
  Matrix ts(R, v.dims.t);
  for (std::size_t t = 0; t < v.dims.t; ++t)
    for (std::size_t i = 0; i < nv; ++i) {
      const int l = atlas.labels[i];
      if (l > 0) ts(static_cast<std::size_t>(l - 1), t) += v.data[t * nv + i];
    }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t t = 0; t < v.dims.t; ++t) ts(r, t) /= static_cast<double>(counts[r + 1]);
  return ts;
}

ConnectivityMatrix connectivity(const Matrix& ts) {
  const std::size_t R = ts.rows, T = ts.cols;
  STORM_CHECK(T >= 3, ErrorKind::kData, "connectivity needs at least 3 frames, got ", T);
  std::vector<double> centered(R * T);
  std::vector<double> norm(R);
  for (std::size_t r = 0; r < R; ++r) {
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t) mean += ts(r, t);
    mean /= static_cast<double>(T);
    double ss = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      centered[r * T + t] = ts(r, t) - mean;
      ss += centered[r * T + t] * centered[r * T + t];
    }
    STORM_CHECK(ss > 0.0, ErrorKind::kData, "ROI ", r + 1, " timeseries has zero variance");
    norm[r] = std::sqrt(ss);
  }
  ConnectivityMatrix cm{Matrix(R, R), Matrix(R, R)};
  for (std::size_t i = 0; i < R; ++i) {
    cm.r(i, i) = 1.0;
    cm.z(i, i) = std::atanh(kFisherClamp);
    for (std::size_t j = i + 1; j < R; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < T; ++t) dot += centered[i * T + t] * centered[j * T + t];
      const double r = std::clamp(dot / (norm[i] * norm[j]), -1.0, 1.0);
      const double z = std::atanh(std::clamp(r, -kFisherClamp, kFisherClamp));
      cm.r(i, j) = cm.r(j, i) = r;
      cm.z(i, j) = cm.z(j, i) = z;
    }
  }
  return cm;
}

NormalizedVolume preprocess(const Volume4D& v, const PreprocessConfig& config) {
  const Volume4D resampled = resample_trilinear(v, config.spacing_mm, config.tr_seconds);
  return normalize_intensity(crop_or_pad(resampled, config.grid), config.normalize);
}

}  // namespace storm::inline STORM_PREC_NS
