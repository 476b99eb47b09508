#pragma once

// Binary checkpoints for all three model kinds.
//
//   "SIDF" | u32 version | u32 kind | u32 n_dims | u32 dims[n_dims]
//   | u32 n_tensors | (u32 rows, u32 cols)[n_tensors] | f32 data (column-major,
//   declared order) | u32 n_vocab | (u32 len, bytes)[n_vocab]
//   | u32 len, config digest bytes
//
// All integers and floats are little-endian. Parameters are stored as float32;
// trained models are float-rounded, so a round trip is bit-exact.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>

#include "sidforge/pipeline.hpp"

namespace sidforge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ModelKind : std::uint32_t { kUniSid = 1, kRqKMeans = 2, kRqVae = 3 };

struct Checkpoint {
  std::variant<UniSidModel, RqKMeansModel, RqVaeModel> model;
  std::string config_digest;

  ModelKind kind() const { return static_cast<ModelKind>(model.index() + 1); }
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
// FormatError on bad magic, version, kind or inconsistent dims;
// CorruptionError on truncated or oversized payloads.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace sidforge
