#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "storm/model/layers.hpp"

namespace storm::inline STORM_PREC_NS {

// Container layout (little-endian):
//   "STORMCKP" | u32 version | u64 manifest bytes | manifest JSON
//   u64 blob count, then per blob:
//   u32 name bytes | name | u8 dtype (0 f32, 1 f64) | u32 ndim | u64 dims[ndim]
//   | u64 payload bytes | payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Blob {
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<std::string> order;
  std::map<std::string, Blob> blobs;
};

std::vector<std::uint8_t> serialize_checkpoint(const nlohmann::json& manifest,
                                               const ParamList& params);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& manifest,
                     const ParamList& params);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies blobs into params by name. Every parameter must be present with the
// same shape; otherwise a config error lists each mismatch.
void load_params(const Checkpoint& ckpt, const ParamList& params);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t file_hash(const std::filesystem::path& path);
// Hash over parameter names, shapes and raw value bytes, in list order.
std::uint64_t params_hash(const ParamList& params);
std::string hex64(std::uint64_t v);

}  // namespace storm::inline STORM_PREC_NS
