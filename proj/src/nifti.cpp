#include "storm/io/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace storm::inline STORM_PREC_NS {

namespace {

// Header field offsets (NIfTI-1).
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffMagic = 344;
constexpr std::size_t kDefaultVoxOffset = 352;

template <class T>
T load(std::span<const std::uint8_t> bytes, std::size_t off, bool swap) {
  T v;
  std::memcpy(&v, bytes.data() + off, sizeof(T));
  if (swap) {
    auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(raw.begin(), raw.end());
    v = std::bit_cast<T>(raw);
  }
  return v;
}

template <class T>
void store(std::vector<std::uint8_t>& bytes, std::size_t off, T v, bool swap) {
  auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
  if (swap) std::reverse(raw.begin(), raw.end());
  std::memcpy(bytes.data() + off, raw.data(), sizeof(T));
}

constexpr bool kHostLittle = std::endian::native == std::endian::little;

std::size_t bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case static_cast<std::int16_t>(NiftiDatatype::kInt16): return 2;
    case static_cast<std::int16_t>(NiftiDatatype::kFloat32): return 4;
    case static_cast<std::int16_t>(NiftiDatatype::kFloat64): return 8;
    default:
      fail(ErrorKind::kUnsupported, "NIfTI datatype code ", datatype,
           " is not supported (expected 4, 16 or 64)");
  }
}

double spatial_unit_to_mm(std::uint8_t xyzt_units) {
  switch (xyzt_units & 0x07) {
    case 1: return 1000.0;  // meter
    case 3: return 0.001;   // micron
    default: return 1.0;    // mm or unknown
  }
}

double time_unit_to_s(std::uint8_t xyzt_units) {
  switch (xyzt_units & 0x38) {
    case 16: return 1e-3;  // msec
    case 24: return 1e-6;  // usec
    default: return 1.0;   // sec or unknown
  }
}

}  // namespace

Volume4D parse_nifti1(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b)
    fail(ErrorKind::kUnsupported, "gzip-compressed NIfTI is not supported; decompress it first");
  STORM_CHECK(bytes.size() >= kNiftiHeaderSize, ErrorKind::kLength,
              "NIfTI header truncated: expected ", kNiftiHeaderSize, " bytes, got ",
              bytes.size());
  const char* magic = reinterpret_cast<const char*>(bytes.data() + kOffMagic);
  if (std::memcmp(magic, "ni1\0", 4) == 0)
    fail(ErrorKind::kUnsupported, "two-file NIfTI (magic \"ni1\") is not supported");
  STORM_CHECK(std::memcmp(magic, "n+1\0", 4) == 0, ErrorKind::kFormat,
              "bad NIfTI magic; expected \"n+1\"");

  // Byte order: dim[0] must fall in [1, 7] when read in the file's order.
  bool swap = false;
  {
    const auto d0 = load<std::int16_t>(bytes, kOffDim, false);
    const bool native_ok = d0 >= 1 && d0 <= 7;
    const auto d0s = load<std::int16_t>(bytes, kOffDim, true);
    const bool swapped_ok = d0s >= 1 && d0s <= 7;
    STORM_CHECK(native_ok || swapped_ok, ErrorKind::kFormat,
                "cannot determine NIfTI byte order from dim[0]");
    swap = !native_ok;
  }
  const auto sizeof_hdr = load<std::int32_t>(bytes, kOffSizeofHdr, swap);
  STORM_CHECK(sizeof_hdr == static_cast<std::int32_t>(kNiftiHeaderSize), ErrorKind::kFormat,
              "NIfTI sizeof_hdr is ", sizeof_hdr, ", expected 348");

  std::array<std::int16_t, 8> dim{};
  for (std::size_t i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(bytes, kOffDim + 2 * i, swap);
  STORM_CHECK(dim[0] == 3 || dim[0] == 4, ErrorKind::kUnsupported, "NIfTI dim[0] = ", dim[0],
              " is not supported (expected 3 or 4)");
  for (int i = 1; i <= dim[0]; ++i)
    STORM_CHECK(dim[i] >= 1, ErrorKind::kFormat, "NIfTI dim[", i, "] = ", dim[i],
                " must be positive");

  const auto datatype = load<std::int16_t>(bytes, kOffDatatype, swap);
  const std::size_t bpv = bytes_per_voxel(datatype);

  std::array<float, 8> pixdim{};
  for (std::size_t i = 0; i < 8; ++i)
    pixdim[i] = load<float>(bytes, kOffPixdim + 4 * i, swap);
  const auto units = bytes[kOffXyztUnits];

  Volume4D v;
  v.dims = Dims4{dim[0] == 4 ? static_cast<std::size_t>(dim[4]) : 1,
                 static_cast<std::size_t>(dim[1]), static_cast<std::size_t>(dim[2]),
                 static_cast<std::size_t>(dim[3])};
  for (std::size_t a = 0; a < 3; ++a) {
    STORM_CHECK(pixdim[a + 1] > 0.0f, ErrorKind::kFormat, "NIfTI pixdim[", a + 1, "] = ",
                pixdim[a + 1], " must be positive");
    v.spacing_mm[a] = static_cast<double>(pixdim[a + 1]) * spatial_unit_to_mm(units);
  }
  if (dim[0] == 4) {
    STORM_CHECK(pixdim[4] > 0.0f, ErrorKind::kFormat, "NIfTI pixdim[4] (TR) = ", pixdim[4],
                " must be positive for 4-D data");
    v.tr_seconds = static_cast<double>(pixdim[4]) * time_unit_to_s(units);
  } else {
    v.tr_seconds = pixdim[4] > 0.0f ? static_cast<double>(pixdim[4]) * time_unit_to_s(units) : 1.0;
  }

  const float vox_offset_f = load<float>(bytes, kOffVoxOffset, swap);
  STORM_CHECK(vox_offset_f >= static_cast<float>(kNiftiHeaderSize), ErrorKind::kFormat,
              "NIfTI vox_offset ", vox_offset_f, " lies inside the header");
  const auto vox_offset = static_cast<std::size_t>(vox_offset_f);
  const std::size_t n = v.dims.total();
  const std::size_t expected = vox_offset + n * bpv;
  STORM_CHECK(bytes.size() >= expected, ErrorKind::kLength, "NIfTI payload truncated: expected ",
              expected, " bytes, got ", bytes.size());

  const float slope = load<float>(bytes, kOffSclSlope, swap);
  const float inter = load<float>(bytes, kOffSclInter, swap);
  const bool scaled = slope != 0.0f && std::isfinite(slope);

  v.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = vox_offset + i * bpv;
    double raw = 0.0;
    switch (bpv) {
      case 2: raw = load<std::int16_t>(bytes, off, swap); break;
      case 4: raw = load<float>(bytes, off, swap); break;
      case 8: raw = load<double>(bytes, off, swap); break;
    }
    v.data[i] = scaled ? raw * static_cast<double>(slope) + static_cast<double>(inter) : raw;
  }
  v.validate();
  return v;
}

std::vector<std::uint8_t> serialize_nifti1(const Volume4D& volume,
                                           const NiftiWriteOptions& options) {
  volume.validate();
  const bool swap = options.big_endian == kHostLittle;
  const auto dt = static_cast<std::int16_t>(options.datatype);
  const std::size_t bpv = bytes_per_voxel(dt);
  const std::size_t n = volume.dims.total();
  for (auto d : {volume.dims.t, volume.dims.x, volume.dims.y, volume.dims.z})
    STORM_CHECK(d <= 32767, ErrorKind::kUnsupported, "dimension ", d,
                " exceeds the NIfTI-1 int16 limit");

  std::vector<std::uint8_t> out(kDefaultVoxOffset + n * bpv, 0);
  store<std::int32_t>(out, kOffSizeofHdr, static_cast<std::int32_t>(kNiftiHeaderSize), swap);
  const bool four_d = volume.dims.t > 1;
  const std::array<std::int16_t, 8> dim{
      static_cast<std::int16_t>(four_d ? 4 : 3), static_cast<std::int16_t>(volume.dims.x),
      static_cast<std::int16_t>(volume.dims.y),  static_cast<std::int16_t>(volume.dims.z),
      static_cast<std::int16_t>(volume.dims.t),  1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) store<std::int16_t>(out, kOffDim + 2 * i, dim[i], swap);
  store<std::int16_t>(out, kOffDatatype, dt, swap);
  store<std::int16_t>(out, kOffBitpix, static_cast<std::int16_t>(bpv * 8), swap);
  const std::array<float, 8> pixdim{1.0f,
                                    static_cast<float>(volume.spacing_mm[0]),
                                    static_cast<float>(volume.spacing_mm[1]),
                                    static_cast<float>(volume.spacing_mm[2]),
                                    static_cast<float>(volume.tr_seconds),
                                    0.0f, 0.0f, 0.0f};
  for (std::size_t i = 0; i < 8; ++i) store<float>(out, kOffPixdim + 4 * i, pixdim[i], swap);
  store<float>(out, kOffVoxOffset, static_cast<float>(kDefaultVoxOffset), swap);
  store<float>(out, kOffSclSlope, options.scl_slope, swap);
  store<float>(out, kOffSclInter, options.scl_inter, swap);
  out[kOffXyztUnits] = 2 | 8;  // mm, seconds
  std::memcpy(out.data() + kOffMagic, "n+1\0", 4);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = kDefaultVoxOffset + i * bpv;
    const double v = volume.data[i];
    switch (options.datatype) {
      case NiftiDatatype::kInt16: {
        STORM_CHECK(v == std::nearbyint(v) && v >= -32768.0 && v <= 32767.0, ErrorKind::kData,
                    "voxel ", i, " value ", v, " is not representable as int16");
        store<std::int16_t>(out, off, static_cast<std::int16_t>(v), swap);
        break;
      }
      case NiftiDatatype::kFloat32: store<float>(out, off, static_cast<float>(v), swap); break;
      case NiftiDatatype::kFloat64: store<double>(out, off, v, swap); break;
    }
  }
  return out;
}

Volume4D read_nifti1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  STORM_CHECK(in.good(), ErrorKind::kData, "cannot open NIfTI file: ", path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_nifti1(bytes);
  } catch (const Error& e) {
    fail(e.kind(), path.string(), ": ", e.what());
  }
}

void write_nifti1(const std::filesystem::path& path, const Volume4D& volume,
                  const NiftiWriteOptions& options) {
  const auto bytes = serialize_nifti1(volume, options);
  std::ofstream out(path, std::ios::binary);
  STORM_CHECK(out.good(), ErrorKind::kData, "cannot write NIfTI file: ", path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  STORM_CHECK(out.good(), ErrorKind::kData, "short write to ", path.string());
}

}  // namespace storm::inline STORM_PREC_NS
