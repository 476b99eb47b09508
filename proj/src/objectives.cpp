#include "sidforge/objectives.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace sidforge {
namespace {

struct Normalized {
  Matrix unit;     // columns scaled to unit norm
  Vector norms;
};

Normalized normalize_columns(const Matrix& z, const char* what) {
  Normalized out{z, Vector(z.cols())};
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double norm = z.col(j).norm();
    if (!(norm > 0.0)) {
      throw NumericError("objectives", std::string("zero-norm ") + what + " vector at batch position " + std::to_string(j));
    }
    out.norms(j) = norm;
    out.unit.col(j) /= norm;
  }
  return out;
}

// One query's InfoNCE-style term over `candidates`, with the positive mass
// spread uniformly over `positives` outside the log. Adds scale * gradient
// to grad and returns the term.
double contrast_term(const Normalized& z, int query, std::span<const int> positives,
                     std::span<const int> candidates, double tau, double scale, Matrix& grad) {
  const Eigen::Index q = query;
  std::vector<double> sims(candidates.size());
  double max = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < candidates.size(); ++a) {
    sims[a] = z.unit.col(q).dot(z.unit.col(candidates[a])) / tau;
    max = std::max(max, sims[a]);
  }
  double sum = 0.0;
  for (double s : sims) sum += std::exp(s - max);
  const double log_z = max + std::log(sum);

  double pos_mean = 0.0;
  for (int p : positives) pos_mean += z.unit.col(q).dot(z.unit.col(p)) / tau;
  pos_mean /= static_cast<double>(positives.size());

  const double inv_p = 1.0 / static_cast<double>(positives.size());
  auto apply = [&](int a, double weight) {
    const double cos = z.unit.col(q).dot(z.unit.col(a));
    const double w = scale * weight / tau;
    grad.col(q) += w * (z.unit.col(a) - cos * z.unit.col(q)) / z.norms(q);
    grad.col(a) += w * (z.unit.col(q) - cos * z.unit.col(a)) / z.norms(a);
  };
  for (std::size_t a = 0; a < candidates.size(); ++a) apply(candidates[a], std::exp(sims[a] - log_z));
  for (int p : positives) apply(p, -inv_p);
  return log_z - pos_mean;
}

}  // namespace

ContrastBatch make_contrast_batch(const ItemCatalog& catalog, std::span<const std::int64_t> ids,
                                  double temperature, int levels) {
  if (levels < 1 || levels > kCategoryLevels) {
    throw ConfigError("objectives", "contrast levels must lie in [1, 3]");
  }
  const GranularPositives pos = build_positive_sets(catalog, ids);
  ContrastBatch batch;
  batch.ids = pos.batch;
  batch.temperature = temperature;
  const int n = static_cast<int>(ids.size());
  for (int l = 0; l < levels; ++l) {
    batch.positives.push_back(pos.positives[static_cast<std::size_t>(l)]);
    std::vector<std::vector<int>> cand(static_cast<std::size_t>(n));
    for (int q = 0; q < n; ++q) {
      for (int a = 0; a < n; ++a) {
        if (a != q) cand[static_cast<std::size_t>(q)].push_back(a);
      }
    }
    batch.candidates.push_back(std::move(cand));
  }
  const auto& leaf_mates = pos.positives[kCategoryLevels - 1];
  batch.emb_positive.assign(static_cast<std::size_t>(n), -1);
  batch.emb_negatives.assign(static_cast<std::size_t>(n), {});
  for (int q = 0; q < n; ++q) {
    const auto& mates = leaf_mates[static_cast<std::size_t>(q)];
    if (mates.empty()) continue;
    const int j = mates.front();
    batch.emb_positive[static_cast<std::size_t>(q)] = j;
    for (int a = 0; a < n; ++a) {
      if (a != q && a != j) batch.emb_negatives[static_cast<std::size_t>(q)].push_back(a);
    }
  }
  validate_contrast_batch(batch);
  return batch;
}

void validate_contrast_batch(const ContrastBatch& batch) {
  if (!(batch.temperature > 0.0)) throw ConfigError("objectives", "temperature must be > 0");
  const int n = batch.size();
  if (static_cast<int>(batch.candidates.size()) != batch.levels()) {
    throw InputError("objectives", "positives/candidates level counts differ");
  }
  for (int l = 0; l < batch.levels(); ++l) {
    const auto& P = batch.positives[static_cast<std::size_t>(l)];
    const auto& A = batch.candidates[static_cast<std::size_t>(l)];
    if (static_cast<int>(P.size()) != n || static_cast<int>(A.size()) != n) {
      throw InputError("objectives", "per-level sets must cover every query");
    }
    for (int q = 0; q < n; ++q) {
      const auto& a = A[static_cast<std::size_t>(q)];
      if (std::find(a.begin(), a.end(), q) != a.end()) {
        throw InputError("objectives", "query must not be its own candidate");
      }
      for (int p : P[static_cast<std::size_t>(q)]) {
        if (std::find(a.begin(), a.end(), p) == a.end()) {
          throw InputError("objectives", "positive missing from candidate set");
        }
        if (l > 0) {
          const auto& coarser = batch.positives[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(q)];
          if (std::find(coarser.begin(), coarser.end(), p) == coarser.end()) {
            throw InputError("objectives", "positive sets are not nested at level " + std::to_string(l + 1));
          }
        }
      }
    }
  }
}

LossGrad mg_contrastive_loss(const Matrix& logits, const ContrastBatch& batch) {
  if (!(batch.temperature > 0.0)) throw ConfigError("objectives", "temperature must be > 0");
  const int levels = batch.levels();
  const int n = batch.size();
  if (levels == 0 || logits.rows() % levels != 0 || logits.cols() != n) {
    throw ShapeError("objectives", "logits must be (L*K) x batch");
  }
  const Eigen::Index k = logits.rows() / levels;
  LossGrad out{0.0, Matrix::Zero(logits.rows(), logits.cols()), 0};
  for (int l = 0; l < levels; ++l) {
    const auto& P = batch.positives[static_cast<std::size_t>(l)];
    int active = 0;
    for (const auto& p : P) active += p.empty() ? 0 : 1;
    if (active == 0) continue;
    const Normalized z = normalize_columns(logits.middleRows(l * k, k), "logit block");
    Matrix grad = Matrix::Zero(k, n);
    const double scale = 1.0 / (static_cast<double>(levels) * active);
    double level_loss = 0.0;
    for (int q = 0; q < n; ++q) {
      if (P[static_cast<std::size_t>(q)].empty()) continue;
      level_loss += contrast_term(z, q, P[static_cast<std::size_t>(q)],
                                  batch.candidates[static_cast<std::size_t>(l)][static_cast<std::size_t>(q)],
                                  batch.temperature, scale, grad);
    }
    out.loss += level_loss * scale;
    out.grad.middleRows(l * k, k) += grad;
    out.active_queries += active;
  }
  if (out.active_queries == 0) throw InputError("objectives", "no query has a positive at any level");
  return out;
}

LossGrad emb_contrastive_loss(const Matrix& embeddings, const ContrastBatch& batch) {
  if (!(batch.temperature > 0.0)) throw ConfigError("objectives", "temperature must be > 0");
  const int n = batch.size();
  if (embeddings.cols() != n) throw ShapeError("objectives", "embeddings must be d_e x batch");
  int active = 0;
  for (int j : batch.emb_positive) active += j >= 0 ? 1 : 0;
  if (active == 0) throw InputError("objectives", "empty batch: no query has a same-leaf mate");
  const Normalized z = normalize_columns(embeddings, "embedding");
  LossGrad out{0.0, Matrix::Zero(embeddings.rows(), n), active};
  const double scale = 1.0 / active;
  for (int q = 0; q < n; ++q) {
    const int j = batch.emb_positive[static_cast<std::size_t>(q)];
    if (j < 0) continue;
    std::vector<int> candidates{j};
    const auto& neg = batch.emb_negatives[static_cast<std::size_t>(q)];
    candidates.insert(candidates.end(), neg.begin(), neg.end());
    const std::array<int, 1> positive{j};
    out.loss += scale * contrast_term(z, q, positive, candidates, batch.temperature, scale, out.grad);
  }
  return out;
}

double total_loss(double l_sid, double l_emb, double l_rec, double lambda) {
  return l_sid + l_emb + lambda * l_rec;
}

void validate_train_config(const TrainConfig& config) {
  if (!(config.lambda >= 0.0)) throw ConfigError("objectives", "lambda must be >= 0");
  if (!(config.temperature > 0.0)) throw ConfigError("objectives", "temperature must be > 0");
  if (config.batch_size < 2) throw ConfigError("objectives", "batch_size must be >= 2");
  if (config.epochs < 0) throw ConfigError("objectives", "epochs must be >= 0");
  if (config.warmup_epochs < 0) throw ConfigError("objectives", "warmup_epochs must be >= 0");
  if (!(config.learning_rate > 0.0)) throw ConfigError("objectives", "learning_rate must be > 0");
  if (config.model.levels != kCategoryLevels) {
    throw ConfigError("objectives", "levels must equal the category depth (3)");
  }
}

double LossReport::mean_total(int epoch) const {
  double sum = 0.0;
  int count = 0;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    if (epoch_of_step[s] != epoch) continue;
    sum += steps[s].total;
    ++count;
  }
  return count == 0 ? 0.0 : sum / count;
}

void write_loss_csv(const LossReport& report, std::ostream& out) {
  out << "step,L_sid,L_emb,L_rec,L_total\n";
  char line[160];
  for (const auto& r : report.steps) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g\n", r.step, r.sid, r.emb, r.rec, r.total);
    out << line;
  }
}

std::vector<SummarySequence> catalog_summaries(const ItemCatalog& catalog, const SummaryVocab& vocab) {
  std::vector<SummarySequence> out;
  out.reserve(catalog.items.size());
  for (const auto& item : catalog.items) out.push_back(summarize(item, catalog.tree, vocab));
  return out;
}

TrainedUniSid train_unisid(const ItemCatalog& catalog, const TrainConfig& config) {
  validate_train_config(config);
  const auto& mc = config.model;
  TrainedUniSid out{make_unisid_model(mc, catalog.spec.feature_dim(), make_summary_vocab(catalog.tree)), {}};
  out.report.lambda = config.lambda;
  UniSidModel& model = out.model;
  init_unisid_model(model, config.seed);
  const std::vector<SummarySequence> summaries = catalog_summaries(catalog, model.recon.vocab);

  ParamList<double> trunk;
  append_params(model.encoder, trunk);
  append_params(model.sid_head, trunk);
  append_params(model.emb_head, trunk);
  append_params(model.recon.recon_head, trunk);
  ParamList<double> decoder;
  append_params(model.recon.decoder, decoder);
  auto trunk_adam = make_adam<double>(trunk, config.learning_rate);
  auto decoder_adam = make_adam<double>(decoder, config.learning_rate);

  Rng shuffler(derive_seed(config.seed, 0x7a11));
  std::vector<std::int64_t> order = catalog.train_ids;
  const Eigen::Index lk = mc.sid_logit_dim();
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffler.shuffle(order);
    const bool decoder_trains =
        config.decoder_mode == DecoderMode::kJoint || epoch < config.warmup_epochs;
    for (std::size_t start = 0; start + 2 <= order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::int64_t> ids(order.data() + start, stop - start);
      const auto n = static_cast<Eigen::Index>(ids.size());
      LossRecord rec;
      rec.step = step;
      try {
        const ContrastBatch batch = make_contrast_batch(catalog, ids, config.temperature, mc.levels);
        UniSidForward fwd = forward_batch(model, feature_matrix(catalog, ids));

        Matrix grad_logits = Matrix::Zero(lk, n);
        Matrix grad_emb = Matrix::Zero(mc.embedding_dim, n);
        if (config.use_sid) {
          bool any = false;
          for (const auto& level : batch.positives) {
            for (const auto& p : level) any = any || !p.empty();
          }
          if (any) {
            LossGrad sid = mg_contrastive_loss(fwd.logits, batch);
            rec.sid = sid.loss;
            grad_logits += sid.grad;
          }
        }
        if (config.use_emb) {
          const bool any = std::any_of(batch.emb_positive.begin(), batch.emb_positive.end(),
                                       [](int j) { return j >= 0; });
          if (any) {
            LossGrad emb = emb_contrastive_loss(fwd.embeddings, batch);
            rec.emb = emb.loss;
            grad_emb += emb.grad;
          }
        }
        Mlp<double> recon_head_grad = model.recon.recon_head.zeros_like();
        Mlp<double> decoder_grad = model.recon.decoder.zeros_like();
        if (config.lambda > 0.0) {
          std::vector<SummarySequence> targets;
          targets.reserve(ids.size());
          for (auto id : ids) targets.push_back(summaries[static_cast<std::size_t>(id)]);
          ReconState state = recon_state(fwd.logits, fwd.embeddings, model.recon);
          ReconLoss rl = recon_loss(state.h_rec, targets, model.recon);
          rec.rec = rl.loss;
          ReconStateGrad sg = recon_state_grad(model.recon, state, config.lambda * rl.grad_h);
          grad_logits += sg.logits;
          grad_emb += sg.embeddings;
          recon_head_grad = std::move(sg.recon_head);
          decoder_grad = std::move(rl.decoder);
          for (auto& layer : decoder_grad.layers) {
            layer.weight *= config.lambda;
            layer.bias *= config.lambda;
          }
        }
        rec.total = total_loss(rec.sid, rec.emb, rec.rec, config.lambda);
        if (!std::isfinite(rec.total)) {
          throw NumericError("objectives", "non-finite total loss (sid=" + std::to_string(rec.sid) +
                                               " emb=" + std::to_string(rec.emb) + " rec=" + std::to_string(rec.rec) + ")");
        }

        // The one-hot SID conditioning of the embedding head carries no gradient.
        auto emb_back = mlp_grad(model.emb_head, fwd.emb_cache, grad_emb);
        auto sid_back = mlp_grad(model.sid_head, fwd.sid_cache, grad_logits);
        Matrix grad_hidden = sid_back.input_grad + emb_back.input_grad.topRows(mc.hidden_dim);
        auto enc_back = mlp_grad(model.encoder, fwd.encoder_cache, grad_hidden);

        ConstParamList<double> trunk_grads;
        append_params(enc_back.param_grads, trunk_grads);
        append_params(sid_back.param_grads, trunk_grads);
        append_params(emb_back.param_grads, trunk_grads);
        append_params(recon_head_grad, trunk_grads);
        adam_step<double>(trunk_adam, trunk, trunk_grads);
        if (decoder_trains) {
          ConstParamList<double> decoder_grads;
          append_params(decoder_grad, decoder_grads);
          adam_step<double>(decoder_adam, decoder, decoder_grads);
        }
      } catch (const NumericError& e) {
        throw NumericError("objectives", "step " + std::to_string(step) + ": " + e.what());
      } catch (const InputError& e) {
        throw InputError("objectives", "step " + std::to_string(step) + ": " + e.what());
      }
      out.report.steps.push_back(rec);
      out.report.epoch_of_step.push_back(epoch);
      ++step;
    }
  }
  round_to_float(model);
  return out;
}

}  // namespace sidforge
