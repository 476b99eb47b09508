#pragma once

// Deterministic attribute summaries and the summary-reconstruction pathway:
// recon_head maps concat(SID logits, embedding) to a conditioning state, and a
// per-position scorer predicts each summary token from that state plus the
// one-hot-encoded prefix.

#include <map>
#include <string>
#include <vector>

#include "sidforge/catalog.hpp"
#include "sidforge/numkit.hpp"

namespace sidforge {

inline constexpr int kSummaryLength = 8;  // including the end marker
inline constexpr int kBeginToken = 0;
inline constexpr int kEndToken = 1;
inline constexpr int kTraitCount = 16;
inline constexpr int kMaxVocabSize = 128;

class SummaryVocab {
 public:
  SummaryVocab() = default;
  explicit SummaryVocab(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const SummaryVocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

SummaryVocab make_summary_vocab(const CategoryTree& tree);

struct SummarySequence {
  std::vector<int> tokens;
  bool operator==(const SummarySequence&) const = default;
};

// [content(c3), industry(c1), category(c1), "highlighting", traitA(c3), "for", traitB(c2), <eos>]
SummarySequence summarize(const Item& item, const CategoryTree& tree, const SummaryVocab& vocab);
SummarySequence summarize(const Item& item, const CategoryTree& tree);

std::string render_summary(const SummarySequence& summary, const SummaryVocab& vocab);

struct ReconPipeline {
  SummaryVocab vocab;
  Mlp<double> recon_head;  // (L*K + d_e) -> d_r, linear
  Mlp<double> decoder;     // (d_r + T_s*V) -> hidden -> V

  int recon_dim() const { return static_cast<int>(recon_head.output_dim()); }
  int vocab_size() const { return vocab.size(); }
};

ReconPipeline make_recon_pipeline(int sid_logit_dim, int embedding_dim, int recon_dim,
                                  int decoder_hidden, SummaryVocab vocab);
void init_recon_pipeline(ReconPipeline& pipeline, Rng& rng);

struct ReconState {
  Matrix h_rec;  // d_r x n
  MlpCache<double> cache;
  Eigen::Index logit_rows = 0;
};

// h_rec = recon_head([flat logits ; embedding]); logits first, embedding second.
ReconState recon_state(const Matrix& logits, const Matrix& embeddings, const ReconPipeline& pipeline);

struct ReconStateGrad {
  Matrix logits;
  Matrix embeddings;
  Mlp<double> recon_head;
};

ReconStateGrad recon_state_grad(const ReconPipeline& pipeline, const ReconState& state, const Matrix& grad_h);

struct ReconLoss {
  double loss = 0.0;             // mean over items of -sum_t log p(s_t | h, s_<t)
  std::vector<double> per_item;
  Matrix grad_h;                 // d(loss)/d(h_rec)
  Mlp<double> decoder;           // d(loss)/d(decoder params)
};

ReconLoss recon_loss(const Matrix& h_rec, std::span<const SummarySequence> targets,
                     const ReconPipeline& pipeline);

// Greedy, teacher-free decoding; stops after the end marker or T_s tokens.
SummarySequence decode_summary(const Vector& h_rec, const ReconPipeline& pipeline);

// Decoder input column for position t given the prefix tokens before t.
Vector decoder_input(const Vector& h_rec, std::span<const int> prefix, int vocab_size);

}  // namespace sidforge
