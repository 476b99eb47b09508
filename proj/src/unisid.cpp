#include "sidforge/unisid.hpp"

#include <thread>

namespace sidforge {

UniSidModel make_unisid_model(const UniSidConfig& config, int input_dim, SummaryVocab vocab) {
  if (config.levels <= 0 || config.codebook_size <= 0 || config.hidden_dim <= 0 ||
      config.embedding_dim <= 0 || config.recon_dim <= 0 || config.decoder_hidden <= 0 || input_dim <= 0) {
    throw ConfigError("unisid", "model dimensions must be positive");
  }
  UniSidModel model;
  model.config = config;
  model.input_dim = input_dim;
  const Eigen::Index lk = config.sid_logit_dim();
  model.encoder = make_mlp<double>({input_dim, config.hidden_dim, config.hidden_dim},
                                   {Activation::kRelu, Activation::kIdentity});
  model.sid_head = make_mlp<double>({config.hidden_dim, lk}, {Activation::kIdentity});
  model.emb_head = make_mlp<double>({config.hidden_dim + lk, config.embedding_dim}, {Activation::kIdentity});
  model.recon = make_recon_pipeline(static_cast<int>(lk), config.embedding_dim, config.recon_dim,
                                    config.decoder_hidden, std::move(vocab));
  return model;
}

void init_unisid_model(UniSidModel& model, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x51d));
  init_uniform(model.encoder, rng);
  init_uniform(model.sid_head, rng);
  init_uniform(model.emb_head, rng);
  init_recon_pipeline(model.recon, rng);
}

void round_to_float(UniSidModel& model) {
  round_to_float(model.encoder);
  round_to_float(model.sid_head);
  round_to_float(model.emb_head);
  round_to_float(model.recon.recon_head);
  round_to_float(model.recon.decoder);
}

ParamList<double> parameters(UniSidModel& model) {
  ParamList<double> out;
  append_params(model.encoder, out);
  append_params(model.sid_head, out);
  append_params(model.emb_head, out);
  append_params(model.recon.recon_head, out);
  append_params(model.recon.decoder, out);
  return out;
}

ConstParamList<double> parameters(const UniSidModel& model) {
  ConstParamList<double> out;
  append_params(model.encoder, out);
  append_params(model.sid_head, out);
  append_params(model.emb_head, out);
  append_params(model.recon.recon_head, out);
  append_params(model.recon.decoder, out);
  return out;
}

SidSequence assign_sid(const Vector& logits, int levels, int codebook_size) {
  if (logits.size() != static_cast<Eigen::Index>(levels) * codebook_size) {
    throw ShapeError("unisid", "logit vector length must equal L*K");
  }
  SidSequence sid;
  sid.tokens.reserve(static_cast<std::size_t>(levels));
  for (int l = 0; l < levels; ++l) {
    const auto block = logits.segment(static_cast<Eigen::Index>(l) * codebook_size, codebook_size);
    int best = 0;
    for (int k = 0; k < codebook_size; ++k) {
      if (std::isnan(block(k))) {
        throw NumericError("unisid", "NaN logit at level " + std::to_string(l + 1) + " index " + std::to_string(k));
      }
      if (block(k) > block(best)) best = k;
    }
    sid.tokens.push_back(best);
  }
  return sid;
}

Matrix one_hot_sids(std::span<const SidSequence> sids, int levels, int codebook_size) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(levels) * codebook_size, static_cast<Eigen::Index>(sids.size()));
  for (std::size_t j = 0; j < sids.size(); ++j) {
    for (int l = 0; l < levels; ++l) {
      out(static_cast<Eigen::Index>(l) * codebook_size + sids[j][static_cast<std::size_t>(l)], static_cast<Eigen::Index>(j)) = 1.0;
    }
  }
  return out;
}

UniSidForward forward_batch(const UniSidModel& model, const Matrix& features) {
  if (features.rows() != model.input_dim) {
    throw ShapeError("unisid", "feature dim " + std::to_string(features.rows()) + " != model input " +
                                   std::to_string(model.input_dim));
  }
  const auto& cfg = model.config;
  UniSidForward out;
  auto enc = mlp_apply(model.encoder, features);
  auto sid = mlp_apply(model.sid_head, enc.output);
  out.sids.reserve(static_cast<std::size_t>(features.cols()));
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    out.sids.push_back(assign_sid(sid.output.col(j), cfg.levels, cfg.codebook_size));
  }
  Matrix emb_in(cfg.hidden_dim + cfg.sid_logit_dim(), features.cols());
  emb_in << enc.output, one_hot_sids(out.sids, cfg.levels, cfg.codebook_size);
  auto emb = mlp_apply(model.emb_head, emb_in);
  out.hidden = std::move(enc.output);
  out.logits = std::move(sid.output);
  out.embeddings = std::move(emb.output);
  out.encoder_cache = std::move(enc.cache);
  out.sid_cache = std::move(sid.cache);
  out.emb_cache = std::move(emb.cache);
  return out;
}

ItemForward forward(const UniSidModel& model, const Item& item) {
  const Matrix x = item_features(item);
  auto fwd = forward_batch(model, x);
  return ItemForward{fwd.hidden.col(0), fwd.logits.col(0), fwd.sids.front(), fwd.embeddings.col(0)};
}

CatalogAssignment assign_catalog(const UniSidModel& model, const ItemCatalog& catalog, int threads) {
  const auto n = static_cast<std::int64_t>(catalog.items.size());
  const int workers = static_cast<int>(std::clamp<std::int64_t>(threads, 1, std::max<std::int64_t>(n, 1)));
  std::vector<std::vector<SidSequence>> shards(static_cast<std::size_t>(workers));
  std::vector<std::exception_ptr> failures(static_cast<std::size_t>(workers));
  auto run = [&](int w) {
    const std::int64_t begin = n * w / workers;
    const std::int64_t end = n * (w + 1) / workers;
    try {
      for (std::int64_t start = begin; start < end; start += 256) {
        const std::int64_t stop = std::min(end, start + 256);
        std::vector<std::int64_t> ids(static_cast<std::size_t>(stop - start));
        std::iota(ids.begin(), ids.end(), start);
        try {
          auto fwd = forward_batch(model, feature_matrix(catalog, ids));
          for (auto& s : fwd.sids) shards[static_cast<std::size_t>(w)].push_back(std::move(s));
        } catch (const Error&) {
          for (auto id : ids) {
            try {
              (void)forward(model, catalog.item(id));
            } catch (const Error& e) {
              throw InputError("unisid", "item " + std::to_string(id) + ": " + e.what());
            }
          }
          throw;
        }
      }
    } catch (...) {
      failures[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  CatalogAssignment out;
  out.table.levels = model.config.levels;
  out.table.codebook_size = model.config.codebook_size;
  std::int64_t id = 0;
  for (auto& shard : shards) {
    for (auto& sid : shard) out.table.sids.emplace(id++, std::move(sid));
  }
  out.stats = collision_rate(out.table);
  return out;
}

}  // namespace sidforge
