#include "sidforge/pipeline.hpp"

namespace sidforge {
namespace {

std::vector<std::int64_t> all_ids(const ItemCatalog& catalog) {
  std::vector<std::int64_t> ids(catalog.items.size());
  std::iota(ids.begin(), ids.end(), std::int64_t{0});
  return ids;
}

Matrix normalize_columns(Matrix m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double norm = m.col(j).norm();
    if (!(norm > 0.0)) throw NumericError("pipeline", "zero-norm embedding at column " + std::to_string(j));
    m.col(j) /= norm;
  }
  return m;
}

SidTable quantize_all(const Codebook& codebook, const Matrix& points) {
  SidTable table;
  table.levels = codebook.levels;
  table.codebook_size = codebook.codebook_size;
  for (Eigen::Index j = 0; j < points.cols(); ++j) table.sids[j] = rq_assign(codebook, points.col(j)).sid;
  return table;
}

}  // namespace

std::string scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::kUniSid: return "unisid";
    case Scheme::kRqKMeans: return "rqkmeans";
    case Scheme::kRqVae: return "rqvae";
  }
  throw UsageError("pipeline", "unknown scheme");
}

Scheme parse_scheme(const std::string& name) {
  for (Scheme s : kAllSchemes) {
    if (scheme_name(s) == name) return s;
  }
  throw UsageError("pipeline", "unknown scheme '" + name + "'");
}

TrainConfig stage1_config(const RqKMeansConfig& config) {
  TrainConfig c = config.stage1;
  c.use_sid = false;
  c.use_emb = true;
  c.lambda = 0.0;
  return c;
}

FittedRqKMeans fit_rqkmeans(const ItemCatalog& catalog, const RqKMeansConfig& config) {
  TrainedUniSid stage1 = train_unisid(catalog, stage1_config(config));
  const Matrix emb = rqkmeans_embed({stage1.model, {}}, feature_matrix(catalog, catalog.train_ids));
  Codebook codebook = rq_kmeans_fit(emb, config.levels, config.codebook_size, derive_seed(config.stage1.seed, 0x59b),
                                    config.iterations);
  for (auto& c : codebook.codewords) c = c.cast<float>().cast<double>();
  return {RqKMeansModel{std::move(stage1.model), std::move(codebook)}, std::move(stage1.report)};
}

RqVaeFit train_rqvae(const ItemCatalog& catalog, const RqVaeConfig& config) {
  return rq_vae_fit(feature_matrix(catalog, catalog.train_ids), config);
}

Matrix unisid_embed(const UniSidModel& model, const Matrix& features) {
  return forward_batch(model, features).embeddings;
}

Matrix rqkmeans_embed(const RqKMeansModel& model, const Matrix& features) {
  return normalize_columns(unisid_embed(model.embedder, features));
}

SidTable rqkmeans_assign(const RqKMeansModel& model, const ItemCatalog& catalog) {
  return quantize_all(model.codebook, rqkmeans_embed(model, feature_matrix(catalog, all_ids(catalog))));
}

SidTable rqvae_assign(const RqVaeModel& model, const ItemCatalog& catalog) {
  return quantize_all(model.codebook, rq_vae_encode(model, feature_matrix(catalog, all_ids(catalog))));
}

double content_accuracy(const UniSidModel& model, const ItemCatalog& catalog, std::span<const std::int64_t> ids) {
  if (ids.empty()) return 0.0;
  const auto fwd = forward_batch(model, feature_matrix(catalog, ids));
  const ReconState state = recon_state(fwd.logits, fwd.embeddings, model.recon);
  std::size_t hits = 0;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const SummarySequence target = summarize(catalog.item(ids[j]), catalog.tree, model.recon.vocab);
    const SummarySequence decoded = decode_summary(state.h_rec.col(static_cast<Eigen::Index>(j)), model.recon);
    if (!decoded.tokens.empty() && decoded.tokens.front() == target.tokens.front()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ids.size());
}

EvalReport evaluate_scheme(const SchemeArtifacts& artifacts, const ItemCatalog& catalog, const EvalConfig& config,
                           std::uint64_t seed, const std::string& config_digest) {
  EvalReport report;
  report.scheme = artifacts.scheme;
  report.seed = seed;
  report.config_digest = config_digest;
  for (int l = 1; l <= artifacts.table.levels; ++l) {
    report.v_measure.push_back(sid_level_vmeasure(artifacts.table, catalog, l, catalog.test_ids));
  }

  UserSimConfig users_cfg = config.users;
  users_cfg.seed = derive_seed(seed, 0x05e);
  const auto users = gen_user_sequences(catalog, users_cfg);
  NextSidConfig next_cfg = config.next_sid;
  next_cfg.seed = derive_seed(seed, 0x4e5);
  const TrainedNextSid next = train_next_sid(users, artifacts.table, next_cfg);
  const auto tests = next_sid_examples(users, artifacts.table, next_cfg.history, true);
  report.hit_rate = hr_at_k(next.model, tests, config.k_list, config.beam_width);

  report.recall = retrieval_recall(artifacts.embed, catalog, catalog.test_ids, config.k_list, config.n_neg,
                                   derive_seed(seed, 0x9e7));
  const CollisionStats stats = collision_rate(artifacts.table);
  report.collision_rate = stats.collision_rate;
  report.distinct_prefixes = stats.distinct_prefixes;
  report.extras["next_sid_final_loss"] = next.epoch_loss.empty() ? 0.0 : next.epoch_loss.back();
  return report;
}

}  // namespace sidforge
