#pragma once

// Command-line entry point. Exit codes: 0 success, 1 runtime failure,
// 2 usage error, 3 configuration validation error.

#include <iosfwd>
#include <string>
#include <vector>

#include "sidforge/checkpoint.hpp"
#include "sidforge/config.hpp"

namespace sidforge {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitValidation = 3;

// args excludes the program name, e.g. {"eval", "--config", "run.json"}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// SIDFORGE_THREADS, default 1.
int worker_threads();

// Catalog used by a run: paths.catalog, else <out>/catalog.json, else
// generated from the spec. Generated catalogs pass through the persisted
// precision so every route yields the same values.
ItemCatalog resolve_catalog(const RunConfig& config);

std::string lambda_label(double lambda);  // 0.01 -> "0.01"

}  // namespace sidforge
