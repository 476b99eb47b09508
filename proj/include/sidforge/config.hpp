#pragma once

// Run configuration: one JSON document with a block per pipeline stage.
// Missing fields take defaults; unknown fields and out-of-range values raise
// ConfigError naming the field. The digest hashes the canonical dump of the
// effective configuration (paths excluded), so it is stable under key
// reordering and output relocation.

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "sidforge/pipeline.hpp"

namespace sidforge {

inline constexpr double kSweepLambdas[] = {0.01, 0.1, 0.5, 1.0};

struct PathsConfig {
  std::string out = "out";
  std::string catalog;  // empty: <out>/catalog.json if present, else generate
};

struct SweepConfig {
  bool both_modes = true;  // also train the alternate decoder mode per lambda
};

struct RunConfig {
  std::uint64_t seed = 7;
  CatalogSpec catalog;
  TrainConfig unisid;
  RqKMeansConfig rqkmeans;
  RqVaeConfig rqvae;
  EvalConfig eval;
  SweepConfig sweep;
  PathsConfig paths;

  // Propagates the top-level seed into every stage.
  void apply_seed(std::uint64_t value);
};

RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json run_config_to_json(const RunConfig& config, bool include_paths = true);

// 16 hex digits of FNV-1a 64 over the canonical dump.
std::string config_digest(const RunConfig& config);
std::uint64_t fnv1a64(std::string_view bytes);

// An empty path yields the defaults. Parse failures raise ConfigError.
RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override);

}  // namespace sidforge
