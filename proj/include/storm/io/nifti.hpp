#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "storm/io/volume.hpp"

namespace storm::inline STORM_PREC_NS {

// Supported subset of NIfTI-1: single-file ("n+1"), no extensions, datatypes
// int16/float32/float64, dim[0] of 3 or 4. Orientation fields are ignored.
enum class NiftiDatatype : std::int16_t {
  kInt16 = 4,
  kFloat32 = 16,
  kFloat64 = 64,
};

inline constexpr std::size_t kNiftiHeaderSize = 348;

struct NiftiWriteOptions {
  NiftiDatatype datatype = NiftiDatatype::kFloat32;
  bool big_endian = false;
  // Stored verbatim; the payload is still written unscaled from the volume.
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
};

Volume4D parse_nifti1(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_nifti1(const Volume4D& volume,
                                           const NiftiWriteOptions& options = {});

Volume4D read_nifti1(const std::filesystem::path& path);
void write_nifti1(const std::filesystem::path& path, const Volume4D& volume,
                  const NiftiWriteOptions& options = {});

}  // namespace storm::inline STORM_PREC_NS
