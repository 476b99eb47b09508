#pragma once

// End-to-end scheme orchestration: train each SID scheme, materialize its SID
// table and retrieval embedder, and evaluate them under one shared protocol.

#include <string>
#include <vector>

#include "sidforge/evalsuite.hpp"
#include "sidforge/objectives.hpp"
#include "sidforge/rq.hpp"

namespace sidforge {

enum class Scheme { kUniSid, kRqKMeans, kRqVae };

inline constexpr Scheme kAllSchemes[] = {Scheme::kUniSid, Scheme::kRqKMeans, Scheme::kRqVae};

std::string scheme_name(Scheme scheme);  // "unisid", "rqkmeans", "rqvae"
Scheme parse_scheme(const std::string& name);

// RQ-KMeans: a stage-1 embedder (UniSID trained with L_emb only) whose
// L2-normalized embeddings are residually quantized.
struct RqKMeansModel {
  UniSidModel embedder;
  Codebook codebook;
  bool operator==(const RqKMeansModel&) const = default;
};

struct RqKMeansConfig {
  TrainConfig stage1;  // use_sid and lambda are forced off
  int levels = 3;
  int codebook_size = 16;
  int iterations = 25;
};

struct FittedRqKMeans {
  RqKMeansModel model;
  LossReport report;
};

TrainConfig stage1_config(const RqKMeansConfig& config);
FittedRqKMeans fit_rqkmeans(const ItemCatalog& catalog, const RqKMeansConfig& config);
RqVaeFit train_rqvae(const ItemCatalog& catalog, const RqVaeConfig& config);

Matrix unisid_embed(const UniSidModel& model, const Matrix& features);
Matrix rqkmeans_embed(const RqKMeansModel& model, const Matrix& features);

SidTable rqkmeans_assign(const RqKMeansModel& model, const ItemCatalog& catalog);
SidTable rqvae_assign(const RqVaeModel& model, const ItemCatalog& catalog);

// Fraction of `ids` whose greedy decoded summary starts with the item's
// content token.
double content_accuracy(const UniSidModel& model, const ItemCatalog& catalog, std::span<const std::int64_t> ids);

struct EvalConfig {
  UserSimConfig users;
  NextSidConfig next_sid;
  std::vector<int> k_list{1, 5, 10, 20};
  int n_neg = 99;
  int beam_width = 0;  // 0: max K
};

struct SchemeArtifacts {
  std::string scheme;
  SidTable table;
  Embedder embed;
};

// V-measure on the test split, HR@K from the shared next-SID model and user
// simulation, R@K over test queries, and collision statistics.
EvalReport evaluate_scheme(const SchemeArtifacts& artifacts, const ItemCatalog& catalog, const EvalConfig& config,
                           std::uint64_t seed, const std::string& config_digest);

}  // namespace sidforge
