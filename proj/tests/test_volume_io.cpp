#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>

#include "doctest.h"
#include "storm/core/rng.hpp"
#include "storm/io/nifti.hpp"
#include "storm/io/preprocess.hpp"
#include "storm/io/synth.hpp"

using namespace storm;

namespace {

// Independent byte-level header writer used as the parser oracle. It
// deliberately shares nothing with serialize_nifti1.
struct RawHeader {
  std::int16_t dim[8] = {3, 2, 2, 2, 1, 1, 1, 1};
  std::int16_t datatype = 16;
  std::int16_t bitpix = 32;
  float pixdim[8] = {1, 2, 2, 2, 0.8f, 0, 0, 0};
  float vox_offset = 352;
  float scl_slope = 0, scl_inter = 0;
  std::uint8_t xyzt_units = 10;
  char magic[4] = {'n', '+', '1', '\0'};
};

template <class T>
void put(std::vector<std::uint8_t>& b, std::size_t off, T v, bool big) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) b[off + i] = big ? raw[sizeof(T) - 1 - i] : raw[i];
}

std::vector<std::uint8_t> raw_header(const RawHeader& h, bool big = false) {
  std::vector<std::uint8_t> b(static_cast<std::size_t>(h.vox_offset), 0);
  put<std::int32_t>(b, 0, 348, big);
  for (int i = 0; i < 8; ++i) put<std::int16_t>(b, 40 + 2 * i, h.dim[i], big);
  put<std::int16_t>(b, 70, h.datatype, big);
  put<std::int16_t>(b, 72, h.bitpix, big);
  for (int i = 0; i < 8; ++i) put<float>(b, 76 + 4 * i, h.pixdim[i], big);
  put<float>(b, 108, h.vox_offset, big);
  put<float>(b, 112, h.scl_slope, big);
  put<float>(b, 116, h.scl_inter, big);
  b[123] = h.xyzt_units;
  std::memcpy(b.data() + 344, h.magic, 4);
  return b;
}

template <class T>
void append(std::vector<std::uint8_t>& b, T v, bool big = false) {
  const std::size_t off = b.size();
  b.resize(off + sizeof(T));
  put<T>(b, off, v, big);
}

ErrorKind kind_of(const std::function<void()>& fn, std::string* msg = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (msg) *msg = e.what();
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kInternal;
}

Volume4D random_volume(Rng& rng, Dims4 d) {
  Volume4D v(d, {2.0, 2.5, 3.0}, 0.75);
  for (auto& x : v.data) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("nifti: minimal handcrafted float32 header") {
  auto bytes = raw_header({});
  for (int i = 0; i < 8; ++i) append<float>(bytes, static_cast<float>(i));
  const Volume4D v = parse_nifti1(bytes);
  CHECK(v.dims == Dims4{1, 2, 2, 2});
  CHECK(v.data == std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(v.spacing_mm == std::array<double, 3>{2, 2, 2});
}

TEST_CASE("nifti: 4-D int16 header with TR in milliseconds") {
  RawHeader h;
  h.dim[0] = 4;
  h.dim[1] = 2;
  h.dim[2] = 1;
  h.dim[3] = 1;
  h.dim[4] = 3;
  h.datatype = 4;
  h.bitpix = 16;
  h.pixdim[4] = 800.0f;
  h.xyzt_units = 2 | 16;
  auto bytes = raw_header(h);
  for (int i = 0; i < 6; ++i) append<std::int16_t>(bytes, static_cast<std::int16_t>(i - 3));
  const Volume4D v = parse_nifti1(bytes);
  CHECK(v.dims == Dims4{3, 2, 1, 1});
  CHECK(v.tr_seconds == doctest::Approx(0.8));
  CHECK(v.data == std::vector<double>{-3, -2, -1, 0, 1, 2});
}

TEST_CASE("nifti: two-file and gzip input are unsupported, garbage magic is a format error") {
  RawHeader h;
  std::memcpy(h.magic, "ni1\0", 4);
  auto bytes = raw_header(h);
  for (int i = 0; i < 8; ++i) append<float>(bytes, 0.0f);
  CHECK(kind_of([&] { parse_nifti1(bytes); }) == ErrorKind::kUnsupported);

  std::memcpy(h.magic, "abc\0", 4);
  auto bad = raw_header(h);
  for (int i = 0; i < 8; ++i) append<float>(bad, 0.0f);
  CHECK(kind_of([&] { parse_nifti1(bad); }) == ErrorKind::kFormat);

  std::vector<std::uint8_t> gz(bad.size(), 0);
  gz[0] = 0x1f;
  gz[1] = 0x8b;
  CHECK(kind_of([&] { parse_nifti1(gz); }) == ErrorKind::kUnsupported);
}

TEST_CASE("nifti: scl_slope / scl_inter scaling") {
  RawHeader h;
  h.scl_slope = 2;
  h.scl_inter = 1;
  auto bytes = raw_header(h);
  for (int i = 0; i < 8; ++i) append<float>(bytes, 3.0f);
  const Volume4D v = parse_nifti1(bytes);
  CHECK(v.data[0] == 7.0);
}

TEST_CASE("nifti: unsupported datatype names the code") {
  RawHeader h;
  h.datatype = 2;  // uint8
  h.bitpix = 8;
  auto bytes = raw_header(h);
  bytes.resize(bytes.size() + 8, 0);
  std::string msg;
  CHECK(kind_of([&] { parse_nifti1(bytes); }, &msg) == ErrorKind::kUnsupported);
  CHECK(msg.find("code 2") != std::string::npos);
}

TEST_CASE("nifti: truncated payload reports expected and actual sizes") {
  auto bytes = raw_header({});
  for (int i = 0; i < 5; ++i) append<float>(bytes, 0.0f);
  std::string msg;
  CHECK(kind_of([&] { parse_nifti1(bytes); }, &msg) == ErrorKind::kLength);
  CHECK(msg.find("384") != std::string::npos);  // 352 + 8*4
  CHECK(msg.find("372") != std::string::npos);

  std::vector<std::uint8_t> tiny(100, 0);
  CHECK(kind_of([&] { parse_nifti1(tiny); }) == ErrorKind::kLength);
}

TEST_CASE("nifti: vox_offset is respected") {
  RawHeader h;
  h.vox_offset = 400;
  auto bytes = raw_header(h);
  for (int i = 0; i < 8; ++i) append<float>(bytes, static_cast<float>(10 + i));
  const Volume4D v = parse_nifti1(bytes);
  CHECK(v.data[0] == 10.0);
  CHECK(v.data[7] == 17.0);
}

TEST_CASE("nifti: big-endian header and payload") {
  RawHeader h;
  auto bytes = raw_header(h, true);
  for (int i = 0; i < 8; ++i) append<float>(bytes, static_cast<float>(i) * 0.5f, true);
  const Volume4D v = parse_nifti1(bytes);
  CHECK(v.dims == Dims4{1, 2, 2, 2});
  CHECK(v.data[3] == 1.5);
}

TEST_CASE("nifti: serializer output matches the independent writer byte for byte") {
  Volume4D v(Dims4{1, 2, 2, 2}, {2, 2, 2}, 0.8);
  std::iota(v.data.begin(), v.data.end(), 0.0);
  auto expected = raw_header({});
  for (int i = 0; i < 8; ++i) append<float>(expected, static_cast<float>(i));
  // The oracle leaves pixdim[4] = 0.8 for 3-D data; so does the serializer.
  CHECK(serialize_nifti1(v) == expected);
}

TEST_CASE("nifti: parse . serialize is the identity (property)") {
  Rng rng(2024);
  for (int trial = 0; trial < 24; ++trial) {
    const Dims4 d{1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(5)};
    Volume4D v = random_volume(rng, d);
    NiftiWriteOptions opt;
    opt.big_endian = trial % 2 == 1;
    switch (trial % 3) {
      case 0:
        opt.datatype = NiftiDatatype::kFloat64;
        break;
      case 1:
        opt.datatype = NiftiDatatype::kFloat32;
        for (auto& x : v.data) x = static_cast<float>(x);
        break;
      case 2:
        opt.datatype = NiftiDatatype::kInt16;
        for (auto& x : v.data) x = std::round(x * 1000.0);
        break;
    }
    INFO("trial ", trial);
    const auto bytes = serialize_nifti1(v, opt);
    const Volume4D back = parse_nifti1(bytes);
    CHECK(back.dims == v.dims);
    CHECK(std::memcmp(back.data.data(), v.data.data(), v.data.size() * sizeof(double)) == 0);
    CHECK(back.spacing_mm == v.spacing_mm);
    CHECK(back.tr_seconds == v.tr_seconds);
    CHECK(serialize_nifti1(back, opt) == bytes);
  }
}

TEST_CASE("nifti: file roundtrip and missing file") {
  const auto dir = std::filesystem::temp_directory_path() / "storm_nifti_test";
  std::filesystem::create_directories(dir);
  Rng rng(1);
  Volume4D v = random_volume(rng, {3, 4, 4, 2});
  write_nifti1(dir / "a.nii", v, {.datatype = NiftiDatatype::kFloat64});
  const Volume4D back = read_nifti1(dir / "a.nii");
  CHECK(back.data == v.data);
  CHECK(kind_of([&] { read_nifti1(dir / "missing.nii"); }) == ErrorKind::kData);
}

TEST_CASE("synth: noise-free volume is exactly low rank") {
  SynthConfig cfg{.seed = 3, .dims = {12, 8, 8, 8}, .n_latent_networks = 3, .noise_sd = 0.0};
  const SynthResult r = synth_fmri(cfg);
  const std::size_t T = cfg.dims.t, V = cfg.dims.spatial();
  // Exact reconstruction from the returned latents.
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < V; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += r.spatial_maps[k][i] * r.timecourses[k][t];
      REQUIRE(r.volume.data[t * V + i] == s);
    }
  // Numerical rank of the T x V unfolding via Gaussian elimination.
  std::vector<std::vector<double>> m(T, std::vector<double>(V));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < V; ++i) m[t][i] = r.volume.data[t * V + i];
  std::size_t rank = 0;
  std::vector<bool> used(T, false);
  for (std::size_t col = 0; col < V && rank < T; ++col) {
    std::size_t piv = T;
    double best = 1e-9;
    for (std::size_t t = 0; t < T; ++t)
      if (!used[t] && std::abs(m[t][col]) > best) {
        best = std::abs(m[t][col]);
        piv = t;
      }
    if (piv == T) continue;
    used[piv] = true;
    ++rank;
    for (std::size_t t = 0; t < T; ++t) {
      if (t == piv) continue;
      const double f = m[t][col] / m[piv][col];
      for (std::size_t j = col; j < V; ++j) m[t][j] -= f * m[piv][j];
    }
  }
  CHECK(rank <= 3);
}

TEST_CASE("synth: deterministic per seed") {
  SynthConfig cfg{.seed = 9, .dims = {6, 5, 5, 5}, .n_latent_networks = 2, .noise_sd = 0.2};
  const auto a = synth_fmri(cfg), b = synth_fmri(cfg);
  CHECK(std::memcmp(a.volume.data.data(), b.volume.data.data(),
                    a.volume.data.size() * sizeof(double)) == 0);
  cfg.seed = 10;
  CHECK(synth_fmri(cfg).volume.data != a.volume.data);
}

TEST_CASE("synth: voxel series correlate with their generating latent") {
  SynthConfig cfg{.seed = 5, .dims = {32, 16, 16, 16}, .n_latent_networks = 3, .noise_sd = 0.1};
  const auto r = synth_fmri(cfg);
  const std::size_t V = cfg.dims.spatial(), T = cfg.dims.t;
  for (std::size_t k = 0; k < 3; ++k) {
    // Voxel where network k dominates most strongly.
    std::size_t best = 0;
    double best_ratio = -1;
    for (std::size_t i = 0; i < V; ++i) {
      double others = 0;
      for (std::size_t j = 0; j < 3; ++j)
        if (j != k) others += r.spatial_maps[j][i];
      const double ratio = r.spatial_maps[k][i] - others;
      if (ratio > best_ratio) {
        best_ratio = ratio;
        best = i;
      }
    }
    double mx = 0, my = 0;
    for (std::size_t t = 0; t < T; ++t) {
      mx += r.volume.data[t * V + best];
      my += r.timecourses[k][t];
    }
    mx /= T;
    my /= T;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const double dx = r.volume.data[t * V + best] - mx, dy = r.timecourses[k][t] - my;
      sxy += dx * dy;
      sxx += dx * dx;
      syy += dy * dy;
    }
    CHECK(sxy / std::sqrt(sxx * syy) > 0.9);
  }
}

TEST_CASE("resample: constant fields stay constant") {
  Volume4D v(Dims4{5, 4, 3, 3}, {2.4, 2.4, 2.4}, 0.735);
  std::fill(v.data.begin(), v.data.end(), 3.25);
  const auto out = resample_trilinear(v, {2.0, 2.0, 2.0}, 0.8);
  for (double x : out.data) CHECK(x == 3.25);
  CHECK(out.spacing_mm == std::array<double, 3>{2, 2, 2});
}

TEST_CASE("resample: identity targets are value-preserving") {
  Rng rng(4);
  Volume4D v = random_volume(rng, {4, 5, 3, 2});
  const auto out = resample_trilinear(v, v.spacing_mm, v.tr_seconds);
  CHECK(out.dims == v.dims);
  for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(std::abs(out.data[i] - v.data[i]) <= 1e-6);
}

TEST_CASE("resample: linear ramp 2mm -> 1mm halves the per-voxel increment") {
  Volume4D v(Dims4{1, 4, 2, 2}, {2, 1, 1}, 1.0);
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 4; ++x) v.at(0, x, y, z) = 10.0 * static_cast<double>(x);
  const auto out = resample_trilinear(v, {1, 1, 1}, 1.0);
  REQUIRE(out.dims.x == 7);
  for (std::size_t x = 0; x < 7; ++x) CHECK(out.at(0, x, 1, 1) == 5.0 * static_cast<double>(x));
}

TEST_CASE("resample: temporal interpolation and single-voxel axes") {
  Volume4D v(Dims4{3, 1, 1, 1}, {2, 2, 2}, 2.0);
  v.data = {0.0, 4.0, 8.0};
  const auto out = resample_trilinear(v, {1, 1, 1}, 1.0);
  CHECK(out.dims.t == 5);
  CHECK(out.dims.x == 1);
  CHECK(out.data == std::vector<double>{0, 2, 4, 6, 8});
}

TEST_CASE("crop_or_pad") {
  Rng rng(6);
  Volume4D v = random_volume(rng, {2, 4, 4, 4});
  CHECK(crop_or_pad(v, {4, 4, 4}).data == v.data);

  Volume4D ones(Dims4{1, 2, 2, 2}, {1, 1, 1}, 1);
  std::fill(ones.data.begin(), ones.data.end(), 1.0);
  const auto padded = crop_or_pad(ones, {4, 4, 4});
  double sum = 0;
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        const bool inside = x >= 1 && x <= 2 && y >= 1 && y <= 2 && z >= 1 && z <= 2;
        CHECK(padded.at(0, x, y, z) == (inside ? 1.0 : 0.0));
        sum += padded.at(0, x, y, z);
      }
  CHECK(sum == 8.0);

  Volume4D line(Dims4{1, 5, 1, 1}, {1, 1, 1}, 1);
  line.data = {0, 1, 2, 3, 4};
  CHECK(crop_or_pad(line, {3, 1, 1}).data == std::vector<double>{1, 2, 3});
  // Odd padding: extra zero on the high side.
  CHECK(crop_or_pad(line, {8, 1, 1}).data == std::vector<double>{0, 0, 1, 2, 3, 4, 0, 0});
}

TEST_CASE("crop_or_pad: pad-then-crop roundtrip (property)") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Dims4 d{1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(6)};
    Volume4D v = random_volume(rng, d);
    const std::array<std::size_t, 3> big{d.x + rng.below(5), d.y + rng.below(5), d.z + rng.below(5)};
    const auto back = crop_or_pad(crop_or_pad(v, big), {d.x, d.y, d.z});
    CHECK(back.data == v.data);
  }
}

TEST_CASE("normalize_intensity") {
  Volume4D c(Dims4{3, 1, 1, 1}, {1, 1, 1}, 1);
  c.data = {1, 1, 1};
  auto n = normalize_intensity(c, NormalizeMode::kGlobalZscore);
  CHECK(n.volume.data == std::vector<double>{0, 0, 0});
  CHECK(n.stats.mean == 1.0);
  CHECK(n.stats.sd == 0.0);

  Volume4D two(Dims4{2, 1, 1, 1}, {1, 1, 1}, 1);
  two.data = {0, 2};
  n = normalize_intensity(two, NormalizeMode::kGlobalZscore);
  CHECK(n.volume.data == std::vector<double>{-1, 1});
  CHECK(n.stats.mean == 1.0);
  CHECK(n.stats.sd == 1.0);

  Rng rng(8);
  Volume4D v = random_volume(rng, {6, 5, 4, 3});
  for (auto& x : v.data) x = 3.0 + 7.0 * x;
  n = normalize_intensity(v, NormalizeMode::kGlobalZscore);
  double m = 0, s = 0;
  for (double x : n.volume.data) m += x;
  m /= n.volume.data.size();
  for (double x : n.volume.data) s += (x - m) * (x - m);
  s = std::sqrt(s / n.volume.data.size());
  CHECK(std::abs(m) < 1e-5);
  CHECK(std::abs(s - 1.0) < 1e-5);
}

TEST_CASE("normalize_intensity: per-voxel mode guards constant voxels") {
  Volume4D v(Dims4{4, 2, 1, 1}, {1, 1, 1}, 1);
  v.data = {5, 1, 5, 2, 5, 3, 5, 4};  // voxel 0 constant
  const auto n = normalize_intensity(v, NormalizeMode::kPerVoxelZscore);
  for (std::size_t t = 0; t < 4; ++t) CHECK(n.volume.data[t * 2] == 0.0);
  CHECK(n.stats.voxel_sd[0] == 0.0);
  CHECK(n.stats.voxel_mean[1] == 2.5);
  double s = 0;
  for (std::size_t t = 0; t < 4; ++t) s += n.volume.data[t * 2 + 1] * n.volume.data[t * 2 + 1];
  CHECK(s / 4 == doctest::Approx(1.0));
}

TEST_CASE("roi_timeseries") {
  Rng rng(13);
  Volume4D v = random_volume(rng, {5, 3, 3, 2});
  LabelVolume all{{3, 3, 2}, std::vector<int>(18, 1), 1};
  const Matrix g = roi_timeseries(v, all);
  for (std::size_t t = 0; t < 5; ++t) {
    double m = 0;
    for (std::size_t i = 0; i < 18; ++i) m += v.data[t * 18 + i];
    CHECK(g(0, t) == doctest::Approx(m / 18).epsilon(1e-12));
  }

  LabelVolume two{{3, 3, 2}, std::vector<int>(18, 0), 2};
  two.labels[4] = 1;
  two.labels[11] = 2;
  const Matrix p = roi_timeseries(v, two);
  for (std::size_t t = 0; t < 5; ++t) {
    CHECK(p(0, t) == v.data[t * 18 + 4]);
    CHECK(p(1, t) == v.data[t * 18 + 11]);
  }

  // Brute force per-label averaging on a random 3-ROI atlas.
  LabelVolume rnd{{3, 3, 2}, std::vector<int>(18), 3};
  for (std::size_t i = 0; i < 18; ++i) rnd.labels[i] = static_cast<int>(i % 4);
  const Matrix q = roi_timeseries(v, rnd);
  for (int r = 1; r <= 3; ++r)
    for (std::size_t t = 0; t < 5; ++t) {
      double s = 0;
      int n = 0;
      for (std::size_t i = 0; i < 18; ++i)
        if (rnd.labels[i] == r) {
          s += v.data[t * 18 + i];
          ++n;
        }
      CHECK(q(r - 1, t) == doctest::Approx(s / n).epsilon(1e-12));
    }

  LabelVolume empty{{3, 3, 2}, std::vector<int>(18, 1), 2};
  std::string msg;
  CHECK(kind_of([&] { roi_timeseries(v, empty); }, &msg) == ErrorKind::kData);
  CHECK(msg.find("ROI 2") != std::string::npos);
}

TEST_CASE("connectivity: Pearson and Fisher z") {
  const double s3 = std::sqrt(3.0);
  Matrix ts(3, 4);
  const double a[4] = {1, -1, 0, 0}, b[4] = {0, 0, 1, -1};
  for (int t = 0; t < 4; ++t) {
    ts(0, t) = a[t];
    ts(1, t) = b[t];
    ts(2, t) = a[t] + s3 * b[t];
  }
  const auto cm = connectivity(ts);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(cm.r(i, i) == 1.0);
    CHECK(std::isfinite(cm.z(i, i)));
  }
  CHECK(std::abs(cm.r(0, 1)) < 1e-15);
  CHECK(std::abs(cm.z(0, 1)) < 1e-15);
  CHECK(cm.r(0, 2) == doctest::Approx(0.5).epsilon(1e-12));
  // atanh(0.5) = ln(3) / 2
  CHECK(cm.z(0, 2) == doctest::Approx(0.5 * std::log(3.0)).epsilon(1e-12));
  CHECK(cm.z(0, 2) == doctest::Approx(0.5493).epsilon(1e-4));

  Rng rng(14);
  Matrix rnd(6, 20);
  for (auto& x : rnd.values) x = rng.normal();
  const auto c2 = connectivity(rnd);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(std::abs(c2.r(i, j) - c2.r(j, i)) <= 1e-7);
      CHECK(std::abs(c2.r(i, j)) <= 1.0);
      CHECK(c2.z(i, j) == c2.z(j, i));
    }

  Matrix flat(2, 4);
  flat(0, 0) = 1;
  std::string msg;
  CHECK(kind_of([&] { connectivity(flat); }, &msg) == ErrorKind::kData);
  CHECK(msg.find("ROI 2") != std::string::npos);
}
