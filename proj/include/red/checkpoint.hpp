#pragma once

// Checkpoint layout, all integers little-endian:
//
//   "REDC" | u32 version | u32 len + config text
//   u32 tensor count, then per tensor:
//     u32 name len + name | u8 dtype (0 f32, 1 f64) | u32 rank | u64 dims[rank] | payload
//   u64 FNV-1a of every preceding byte

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "red/revnet.hpp"

namespace red {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

struct CheckpointData {
  std::string config_text;
  std::variant<ParameterStore<float>, ParameterStore<double>> params;
};

template <Real T>
std::vector<std::uint8_t> encode_checkpoint(const std::string& config_text, const ParameterStore<T>& params);

// Throws DataError on a bad magic, version, checksum, truncation or mixed dtypes.
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
// Writes via a temporary file and rename, so a crash never leaves a torn file.
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace red
