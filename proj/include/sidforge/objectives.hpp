#pragma once

// Training objectives for the unified generator and its end-to-end loop:
//   L_total = L_sid + L_emb + lambda * L_rec
// where L_sid is the per-level supervised contrastive loss over SID logit
// blocks, L_emb the embedding contrastive loss and L_rec the summary
// reconstruction cross-entropy.

#include <iosfwd>
#include <string>
#include <vector>

#include "sidforge/catalog.hpp"
#include "sidforge/unisid.hpp"

namespace sidforge {

struct ContrastBatch {
  std::vector<std::int64_t> ids;
  // [level][query] -> batch positions.
  std::vector<std::vector<std::vector<int>>> positives;
  std::vector<std::vector<std::vector<int>>> candidates;
  // Embedding pairing: one same-leaf mate per query (-1 when none) and the
  // rest of the batch as negatives.
  std::vector<int> emb_positive;
  std::vector<std::vector<int>> emb_negatives;
  double temperature = 0.07;

  int levels() const { return static_cast<int>(positives.size()); }
  int size() const { return static_cast<int>(ids.size()); }
};

ContrastBatch make_contrast_batch(const ItemCatalog& catalog, std::span<const std::int64_t> ids,
                                  double temperature, int levels = kCategoryLevels);

// Checks A_l(i) contains P_l(i), i is not in A_l(i), tau > 0, and that the
// positive sets nest (P_{l+1} within P_l). Throws InputError/ConfigError.
void validate_contrast_batch(const ContrastBatch& batch);

struct LossGrad {
  double loss = 0.0;
  Matrix grad;
  int active_queries = 0;
};

// logits: L*K x n, block l in rows [l*K, (l+1)*K).
LossGrad mg_contrastive_loss(const Matrix& logits, const ContrastBatch& batch);
LossGrad emb_contrastive_loss(const Matrix& embeddings, const ContrastBatch& batch);

double total_loss(double l_sid, double l_emb, double l_rec, double lambda);

enum class DecoderMode { kFrozenAfterWarmup, kJoint };

struct TrainConfig {
  double lambda = 0.1;
  double temperature = 0.07;
  int epochs = 40;
  int batch_size = 64;
  std::uint64_t seed = 7;
  double learning_rate = 1e-3;
  UniSidConfig model;
  bool use_sid = true;
  bool use_emb = true;
  DecoderMode decoder_mode = DecoderMode::kFrozenAfterWarmup;
  int warmup_epochs = 30;
};

void validate_train_config(const TrainConfig& config);

struct LossRecord {
  int step = 0;
  double sid = 0.0;
  double emb = 0.0;
  double rec = 0.0;
  double total = 0.0;
  bool operator==(const LossRecord&) const = default;
};

struct LossReport {
  std::vector<LossRecord> steps;
  std::vector<int> epoch_of_step;
  double lambda = 0.0;

  double mean_total(int epoch) const;
  bool operator==(const LossReport&) const = default;
};

// CSV: step,L_sid,L_emb,L_rec,L_total
void write_loss_csv(const LossReport& report, std::ostream& out);

struct TrainedUniSid {
  UniSidModel model;
  LossReport report;
};

TrainedUniSid train_unisid(const ItemCatalog& catalog, const TrainConfig& config);

// Summaries for every catalog item, indexed by id.
std::vector<SummarySequence> catalog_summaries(const ItemCatalog& catalog, const SummaryVocab& vocab);

}  // namespace sidforge
