#pragma once

// SID and embedding quality metrics: prefix V-measure against leaf labels,
// next-SID hit rate through a small autoregressive model decoded by beam
// search, sampled-negative retrieval recall, and collision statistics.

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "sidforge/catalog.hpp"
#include "sidforge/numkit.hpp"
#include "sidforge/sid_table.hpp"

namespace sidforge {

// ---------------------------------------------------------------------------
// Clustering agreement.

struct ContingencyTable {
  std::vector<std::vector<double>> counts;  // [cluster][label]
  std::vector<double> cluster_totals;
  std::vector<double> label_totals;
  double total = 0.0;
};

ContingencyTable build_contingency(std::span<const std::int64_t> clusters, std::span<const std::int64_t> labels);

struct VMeasure {
  double homogeneity = 0.0;
  double completeness = 0.0;
  double v = 0.0;
};

VMeasure v_measure(std::span<const std::int64_t> clusters, std::span<const std::int64_t> labels);
VMeasure v_measure(const ContingencyTable& table);

// Clusters are SID prefixes (s1..s_level) over `ids`; labels are leaf categories.
double sid_level_vmeasure(const SidTable& table, const ItemCatalog& catalog, int level,
                          std::span<const std::int64_t> ids);

// ---------------------------------------------------------------------------
// Synthetic user behaviour.

struct UserSequence {
  std::vector<std::int64_t> items;  // last item is the held-out target
};

struct UserSimConfig {
  int n_users = 2000;
  int length = 20;
  double preference = 0.8;
  int preferred_nodes = 2;  // level-2 subtrees each user favours
  std::uint64_t seed = 7;
};

std::vector<UserSequence> gen_user_sequences(const ItemCatalog& catalog, const UserSimConfig& config);

// ---------------------------------------------------------------------------
// Downstream next-SID model.

struct NextSidConfig {
  int dim = 32;
  int hidden = 64;
  int history = 5;
  int epochs = 4;
  int batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;
};

struct NextSidModel {
  int levels = 3;
  int codebook_size = 16;
  int history = 5;
  Matrix token_table;       // dim x (L*K): one column per (level, token)
  Vector pooling;           // fixed uniform weights over the history window
  std::vector<Mlp<double>> scorers;  // level l: dim + l*K -> hidden -> K

  int dim() const { return static_cast<int>(token_table.rows()); }
};

struct NextSidExample {
  std::vector<SidSequence> history;  // oldest first, at most model.history entries
  SidSequence target;
};

// Training examples predict every position 1..T-2 from its preceding window;
// test examples predict position T-1.
std::vector<NextSidExample> next_sid_examples(std::span<const UserSequence> sequences, const SidTable& table,
                                              int history, bool held_out);

NextSidModel make_next_sid_model(int levels, int codebook_size, const NextSidConfig& config);

struct NextSidLoss {
  double loss = 0.0;                    // mean over examples of the summed per-level CE
  std::vector<double> per_level;        // mean CE at each level
  Matrix token_table_grad;
  std::vector<Mlp<double>> scorer_grads;
  std::uint64_t regime = 0;
};

NextSidLoss next_sid_loss(const NextSidModel& model, std::span<const NextSidExample> examples);

struct TrainedNextSid {
  NextSidModel model;
  std::vector<double> epoch_loss;
};

TrainedNextSid train_next_sid(std::span<const UserSequence> sequences, const SidTable& table,
                              const NextSidConfig& config);
TrainedNextSid train_next_sid(std::span<const NextSidExample> examples, int levels, int codebook_size,
                              const NextSidConfig& config);

// Log-softmax over level-`prefix.size()` tokens given history and prefix.
Vector next_level_log_probs(const NextSidModel& model, const Vector& history, std::span<const int> prefix);
Vector pooled_history(const NextSidModel& model, std::span<const SidSequence> history);

struct ScoredSid {
  SidSequence sid;
  double score = 0.0;  // sum of per-level log-probabilities
};

// Ordered by score descending, then lexicographically ascending tokens.
std::vector<ScoredSid> beam_search(const NextSidModel& model, std::span<const SidSequence> history, int width);

std::map<int, double> hr_at_k(const NextSidModel& model, std::span<const NextSidExample> tests,
                              std::span<const int> k_list, int beam_width = 0);

// ---------------------------------------------------------------------------
// Embedding retrieval.

using Embedder = std::function<Matrix(const Matrix& features)>;

enum class QueryView { kPerturbed, kUnperturbed };

// attr block zeroed, text block replaced by prototype + fresh noise.
Matrix query_features(const ItemCatalog& catalog, std::span<const std::int64_t> ids, std::uint64_t seed);

// First n_neg entries of a seeded shuffle of every id except `query`, so
// pools for smaller n_neg are prefixes of larger ones.
std::vector<std::int64_t> sample_negatives(std::int64_t catalog_size, std::int64_t query, int n_neg,
                                           std::uint64_t seed);

std::map<int, double> retrieval_recall(const Embedder& embed, const ItemCatalog& catalog,
                                       std::span<const std::int64_t> query_ids, std::span<const int> k_list,
                                       int n_neg, std::uint64_t seed,
                                       QueryView view = QueryView::kPerturbed);

// ---------------------------------------------------------------------------
// Reports.

struct EvalReport {
  std::string scheme;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<double> v_measure;   // per level
  std::map<int, double> hit_rate;  // HR@K
  std::map<int, double> recall;    // R@K
  double collision_rate = 0.0;
  std::vector<std::size_t> distinct_prefixes;
  std::map<std::string, double> extras;  // scheme-specific diagnostics

  bool operator==(const EvalReport&) const = default;
};

nlohmann::json eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& doc);
// One row per (scheme, metric, value).
void write_eval_csv(const EvalReport& report, std::ostream& out, bool header = true);

}  // namespace sidforge
