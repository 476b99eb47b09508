#pragma once

// Unified SID/embedding generator: a shared encoder produces one pooled hidden
// state per item; the SID head emits L blocks of K logits whose per-block
// argmax is the SID, and the embedding head reads the hidden state together
// with the one-hot of the generated tokens.

#include "sidforge/catalog.hpp"
#include "sidforge/numkit.hpp"
#include "sidforge/sid_table.hpp"
#include "sidforge/summarizer.hpp"

namespace sidforge {

struct UniSidConfig {
  int levels = 3;
  int codebook_size = 16;
  int hidden_dim = 64;
  int embedding_dim = 32;
  int recon_dim = 32;
  int decoder_hidden = 64;

  int sid_logit_dim() const { return levels * codebook_size; }
  bool operator==(const UniSidConfig&) const = default;
};

struct UniSidModel {
  UniSidConfig config;
  int input_dim = 0;
  Mlp<double> encoder;   // input -> d_h (relu) -> d_h
  Mlp<double> sid_head;  // d_h -> L*K
  Mlp<double> emb_head;  // d_h + L*K -> d_e
  ReconPipeline recon;

  bool operator==(const UniSidModel& o) const {
    return config == o.config && input_dim == o.input_dim && encoder == o.encoder &&
           sid_head == o.sid_head && emb_head == o.emb_head && recon.vocab == o.recon.vocab &&
           recon.recon_head == o.recon.recon_head && recon.decoder == o.recon.decoder;
  }
};

// All parameters zero; shapes fixed by (config, input_dim, vocab).
UniSidModel make_unisid_model(const UniSidConfig& config, int input_dim, SummaryVocab vocab);
void init_unisid_model(UniSidModel& model, std::uint64_t seed);
void round_to_float(UniSidModel& model);

// Declared order: encoder, sid_head, emb_head, recon_head, decoder.
ParamList<double> parameters(UniSidModel& model);
ConstParamList<double> parameters(const UniSidModel& model);

// Per-block argmax of flat L*K logits; ties go to the lowest index.
SidSequence assign_sid(const Vector& logits, int levels, int codebook_size);

Matrix one_hot_sids(std::span<const SidSequence> sids, int levels, int codebook_size);

struct UniSidForward {
  Matrix hidden;      // d_h x n
  Matrix logits;      // L*K x n
  Matrix embeddings;  // d_e x n
  std::vector<SidSequence> sids;
  MlpCache<double> encoder_cache;
  MlpCache<double> sid_cache;
  MlpCache<double> emb_cache;
};

UniSidForward forward_batch(const UniSidModel& model, const Matrix& features);

struct ItemForward {
  Vector hidden;
  Vector logits;
  SidSequence sid;
  Vector embedding;
};

ItemForward forward(const UniSidModel& model, const Item& item);

struct CatalogAssignment {
  SidTable table;
  CollisionStats stats;
};

// Shards items over `threads` workers; the merged table is keyed by item id.
CatalogAssignment assign_catalog(const UniSidModel& model, const ItemCatalog& catalog, int threads = 1);

}  // namespace sidforge
