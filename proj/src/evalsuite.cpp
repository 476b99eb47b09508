#include "sidforge/evalsuite.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <set>

namespace sidforge {
namespace {

std::vector<std::size_t> densify(std::span<const std::int64_t> values, std::size_t& distinct) {
  std::map<std::int64_t, std::size_t> index;
  std::vector<std::size_t> out;
  out.reserve(values.size());
  for (auto v : values) out.push_back(index.emplace(v, index.size()).first->second);
  distinct = index.size();
  return out;
}

double entropy(std::span<const double> counts, double total) {
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) h -= (c / total) * std::log(c / total);
  }
  return h;
}

}  // namespace

ContingencyTable build_contingency(std::span<const std::int64_t> clusters, std::span<const std::int64_t> labels) {
  if (clusters.size() != labels.size()) {
    throw InputError("evalsuite", "cluster and label assignments cover different id sets");
  }
  if (clusters.empty()) throw InputError("evalsuite", "v_measure needs at least one item");
  std::size_t n_clusters = 0;
  std::size_t n_labels = 0;
  const auto c = densify(clusters, n_clusters);
  const auto l = densify(labels, n_labels);
  ContingencyTable t;
  t.counts.assign(n_clusters, std::vector<double>(n_labels, 0.0));
  t.cluster_totals.assign(n_clusters, 0.0);
  t.label_totals.assign(n_labels, 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    t.counts[c[i]][l[i]] += 1.0;
    t.cluster_totals[c[i]] += 1.0;
    t.label_totals[l[i]] += 1.0;
  }
  t.total = static_cast<double>(c.size());
  return t;
}

VMeasure v_measure(const ContingencyTable& t) {
  const double h_label = entropy(t.label_totals, t.total);
  const double h_cluster = entropy(t.cluster_totals, t.total);
  double h_label_given_cluster = 0.0;
  double h_cluster_given_label = 0.0;
  for (std::size_t c = 0; c < t.counts.size(); ++c) {
    for (std::size_t l = 0; l < t.counts[c].size(); ++l) {
      const double n = t.counts[c][l];
      if (n <= 0.0) continue;
      h_label_given_cluster -= (n / t.total) * std::log(n / t.cluster_totals[c]);
      h_cluster_given_label -= (n / t.total) * std::log(n / t.label_totals[l]);
    }
  }
  VMeasure out;
  out.homogeneity = h_label == 0.0 ? 1.0 : 1.0 - h_label_given_cluster / h_label;
  out.completeness = h_cluster == 0.0 ? 1.0 : 1.0 - h_cluster_given_label / h_cluster;
  const double sum = out.homogeneity + out.completeness;
  out.v = sum == 0.0 ? 0.0 : 2.0 * out.homogeneity * out.completeness / sum;
  return out;
}

VMeasure v_measure(std::span<const std::int64_t> clusters, std::span<const std::int64_t> labels) {
  return v_measure(build_contingency(clusters, labels));
}

double sid_level_vmeasure(const SidTable& table, const ItemCatalog& catalog, int level,
                          std::span<const std::int64_t> ids) {
  if (level < 1 || level > table.levels) throw InputError("evalsuite", "level must lie in [1, L]");
  std::map<std::vector<int>, std::int64_t> prefix_ids;
  std::vector<std::int64_t> clusters;
  std::vector<std::int64_t> labels;
  for (auto id : ids) {
    const SidSequence& sid = table.at(id);
    std::vector<int> prefix(sid.tokens.begin(), sid.tokens.begin() + level);
    clusters.push_back(prefix_ids.emplace(std::move(prefix), static_cast<std::int64_t>(prefix_ids.size())).first->second);
    labels.push_back(catalog.item(id).labels[kCategoryLevels - 1]);
  }
  return v_measure(clusters, labels).v;
}

std::vector<UserSequence> gen_user_sequences(const ItemCatalog& catalog, const UserSimConfig& config) {
  const auto n_items = static_cast<std::int64_t>(catalog.items.size());
  if (n_items == 0) throw ConfigError("evalsuite", "catalog is empty");
  if (config.length < 2) throw ConfigError("evalsuite", "sequence length must be >= 2");
  if (config.length >= n_items) throw ConfigError("evalsuite", "sequence length must be < catalog size");
  if (config.n_users < 1) throw ConfigError("evalsuite", "n_users must be >= 1");
  if (!(config.preference >= 0.0 && config.preference <= 1.0)) {
    throw ConfigError("evalsuite", "preference must lie in [0, 1]");
  }
  const int n_nodes = catalog.tree.node_count(1);
  if (config.preferred_nodes < 1 || config.preferred_nodes > n_nodes) {
    throw ConfigError("evalsuite", "preferred_nodes must lie in [1, level-2 node count]");
  }
  std::vector<std::vector<std::int64_t>> subtree(static_cast<std::size_t>(n_nodes));
  for (const auto& item : catalog.items) subtree[static_cast<std::size_t>(item.labels[1])].push_back(item.id);

  std::vector<UserSequence> users;
  users.reserve(static_cast<std::size_t>(config.n_users));
  for (int u = 0; u < config.n_users; ++u) {
    Rng rng(derive_seed(config.seed, 0x05e7 + static_cast<std::uint64_t>(u)));
    std::vector<int> nodes(static_cast<std::size_t>(n_nodes));
    std::iota(nodes.begin(), nodes.end(), 0);
    for (int i = 0; i < config.preferred_nodes; ++i) {
      const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(n_nodes - i));
      std::swap(nodes[static_cast<std::size_t>(i)], nodes[j]);
    }
    UserSequence seq;
    for (int t = 0; t < config.length; ++t) {
      if (rng.uniform() < config.preference) {
        const auto& pool = subtree[static_cast<std::size_t>(nodes[rng.below(static_cast<std::uint64_t>(config.preferred_nodes))])];
        seq.items.push_back(pool[rng.below(pool.size())]);
      } else {
        seq.items.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n_items))));
      }
    }
    users.push_back(std::move(seq));
  }
  return users;
}

std::vector<NextSidExample> next_sid_examples(std::span<const UserSequence> sequences, const SidTable& table,
                                              int history, bool held_out) {
  std::vector<NextSidExample> out;
  auto make = [&](const UserSequence& seq, std::size_t t) {
    NextSidExample ex;
    const std::size_t first = t > static_cast<std::size_t>(history) ? t - static_cast<std::size_t>(history) : 0;
    for (std::size_t h = first; h < t; ++h) ex.history.push_back(table.at(seq.items[h]));
    ex.target = table.at(seq.items[t]);
    out.push_back(std::move(ex));
  };
  for (const auto& seq : sequences) {
    if (seq.items.size() < 2) throw InputError("evalsuite", "user sequence shorter than 2");
    if (held_out) {
      make(seq, seq.items.size() - 1);
    } else {
      for (std::size_t t = 1; t + 1 < seq.items.size(); ++t) make(seq, t);
    }
  }
  return out;
}

NextSidModel make_next_sid_model(int levels, int codebook_size, const NextSidConfig& config) {
  if (levels < 1 || codebook_size < 1 || config.dim < 1 || config.hidden < 1 || config.history < 1) {
    throw ConfigError("evalsuite", "next-SID model dims must be positive");
  }
  NextSidModel m;
  m.levels = levels;
  m.codebook_size = codebook_size;
  m.history = config.history;
  Rng rng(derive_seed(config.seed, 0x4e5));
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.dim));
  m.token_table.resize(config.dim, static_cast<Eigen::Index>(levels) * codebook_size);
  for (Eigen::Index c = 0; c < m.token_table.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.token_table.rows(); ++r) m.token_table(r, c) = static_cast<float>(rng.uniform(-bound, bound));
  }
  m.pooling = Vector::Constant(config.history, 1.0 / config.history);
  for (int l = 0; l < levels; ++l) {
    auto scorer = make_mlp<double>({config.dim + l * codebook_size, config.hidden, codebook_size},
                                   {Activation::kRelu, Activation::kIdentity});
    init_uniform(scorer, rng);
    // Zero output layer: an untrained model predicts uniformly at every level.
    scorer.layers.back().weight.setZero();
    scorer.layers.back().bias.setZero();
    m.scorers.push_back(std::move(scorer));
  }
  return m;
}

Vector pooled_history(const NextSidModel& model, std::span<const SidSequence> history) {
  Vector h = Vector::Zero(model.dim());
  if (history.empty()) return h;
  // Weights align to the most recent entries.
  const std::size_t offset = static_cast<std::size_t>(model.history) - std::min(history.size(), static_cast<std::size_t>(model.history));
  const std::size_t skip = history.size() > static_cast<std::size_t>(model.history) ? history.size() - static_cast<std::size_t>(model.history) : 0;
  double weight_sum = 0.0;
  for (std::size_t i = skip; i < history.size(); ++i) {
    const double w = model.pooling(static_cast<Eigen::Index>(offset + i - skip));
    for (int l = 0; l < model.levels; ++l) {
      h += w * model.token_table.col(static_cast<Eigen::Index>(l) * model.codebook_size + history[i][static_cast<std::size_t>(l)]);
    }
    weight_sum += w;
  }
  return h / weight_sum;
}

NextSidLoss next_sid_loss(const NextSidModel& model, std::span<const NextSidExample> examples) {
  const auto n = static_cast<Eigen::Index>(examples.size());
  if (n == 0) throw InputError("evalsuite", "next_sid_loss needs examples");
  const int k = model.codebook_size;
  const int d = model.dim();
  Matrix hist(d, n);
  for (Eigen::Index j = 0; j < n; ++j) hist.col(j) = pooled_history(model, examples[static_cast<std::size_t>(j)].history);

  NextSidLoss out;
  out.per_level.assign(static_cast<std::size_t>(model.levels), 0.0);
  out.token_table_grad = Matrix::Zero(model.token_table.rows(), model.token_table.cols());
  Matrix grad_hist = Matrix::Zero(d, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::uint64_t regime = 0;
  for (int l = 0; l < model.levels; ++l) {
    Matrix x = Matrix::Zero(d + l * k, n);
    x.topRows(d) = hist;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& target = examples[static_cast<std::size_t>(j)].target;
      for (int m = 0; m < l; ++m) x(d + m * k + target[static_cast<std::size_t>(m)], j) = 1.0;
    }
    auto fwd = mlp_apply(model.scorers[static_cast<std::size_t>(l)], x);
    Matrix g(k, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const int t = examples[static_cast<std::size_t>(j)].target[static_cast<std::size_t>(l)];
      const auto logits = fwd.output.col(j);
      const double max = logits.maxCoeff();
      const Vector ex = (logits.array() - max).exp().matrix();
      const double sum = ex.sum();
      out.per_level[static_cast<std::size_t>(l)] += (max + std::log(sum) - logits(t)) * inv_n;
      g.col(j) = ex / sum * inv_n;
      g(t, j) -= inv_n;
    }
    auto back = mlp_grad(model.scorers[static_cast<std::size_t>(l)], fwd.cache, g);
    grad_hist += back.input_grad.topRows(d);
    out.scorer_grads.push_back(std::move(back.param_grads));
    regime = mix64(regime ^ relu_regime(model.scorers[static_cast<std::size_t>(l)], fwd.cache));
  }
  for (double v : out.per_level) out.loss += v;

  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& history = examples[static_cast<std::size_t>(j)].history;
    if (history.empty()) continue;
    const std::size_t skip = history.size() > static_cast<std::size_t>(model.history) ? history.size() - static_cast<std::size_t>(model.history) : 0;
    const std::size_t offset = static_cast<std::size_t>(model.history) - (history.size() - skip);
    double weight_sum = 0.0;
    for (std::size_t i = skip; i < history.size(); ++i) weight_sum += model.pooling(static_cast<Eigen::Index>(offset + i - skip));
    for (std::size_t i = skip; i < history.size(); ++i) {
      const double w = model.pooling(static_cast<Eigen::Index>(offset + i - skip)) / weight_sum;
      for (int l = 0; l < model.levels; ++l) {
        out.token_table_grad.col(static_cast<Eigen::Index>(l) * k + history[i][static_cast<std::size_t>(l)]) += w * grad_hist.col(j);
      }
    }
  }
  out.regime = regime;
  return out;
}

TrainedNextSid train_next_sid(std::span<const NextSidExample> examples, int levels, int codebook_size,
                              const NextSidConfig& config) {
  if (config.epochs < 0 || config.batch_size < 1) throw ConfigError("evalsuite", "epochs >= 0, batch_size >= 1 required");
  for (const auto& ex : examples) {
    validate_sid(ex.target, levels, codebook_size);
    for (const auto& h : ex.history) validate_sid(h, levels, codebook_size);
  }
  TrainedNextSid out{make_next_sid_model(levels, codebook_size, config), {}};
  NextSidModel& model = out.model;
  ParamList<double> params;
  append_params(model.token_table, params);
  for (auto& s : model.scorers) append_params(s, params);
  auto adam = make_adam<double>(params, config.learning_rate);
  Rng rng(derive_seed(config.seed, 0x4e6));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<NextSidExample> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(examples[order[i]]);
      NextSidLoss loss = next_sid_loss(model, batch);
      ConstParamList<double> grads;
      append_params(loss.token_table_grad, grads);
      for (const auto& g : loss.scorer_grads) append_params(g, grads);
      adam_step<double>(adam, params, grads);
      sum += loss.loss;
      ++steps;
    }
    out.epoch_loss.push_back(steps ? sum / steps : 0.0);
  }
  return out;
}

TrainedNextSid train_next_sid(std::span<const UserSequence> sequences, const SidTable& table,
                              const NextSidConfig& config) {
  const auto examples = next_sid_examples(sequences, table, config.history, false);
  return train_next_sid(examples, table.levels, table.codebook_size, config);
}

Vector next_level_log_probs(const NextSidModel& model, const Vector& history, std::span<const int> prefix) {
  const int l = static_cast<int>(prefix.size());
  if (l >= model.levels) throw InputError("evalsuite", "prefix already spans every level");
  const int k = model.codebook_size;
  Matrix x = Matrix::Zero(model.dim() + l * k, 1);
  x.topRows(model.dim()) = history;
  for (int m = 0; m < l; ++m) x(model.dim() + m * k + prefix[static_cast<std::size_t>(m)], 0) = 1.0;
  const Vector logits = mlp_apply(model.scorers[static_cast<std::size_t>(l)], x).output.col(0);
  const double max = logits.maxCoeff();
  const double log_z = max + std::log((logits.array() - max).exp().sum());
  return logits.array() - log_z;
}

std::vector<ScoredSid> beam_search(const NextSidModel& model, std::span<const SidSequence> history, int width) {
  if (width < 1) throw ConfigError("evalsuite", "beam width must be >= 1");
  const Vector hv = pooled_history(model, history);
  std::vector<ScoredSid> beams{ScoredSid{}};
  auto better = [](const ScoredSid& a, const ScoredSid& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.sid.tokens < b.sid.tokens;
  };
  for (int l = 0; l < model.levels; ++l) {
    std::vector<ScoredSid> next;
    next.reserve(beams.size() * static_cast<std::size_t>(model.codebook_size));
    for (const auto& beam : beams) {
      const Vector lp = next_level_log_probs(model, hv, beam.sid.tokens);
      for (int k = 0; k < model.codebook_size; ++k) {
        ScoredSid cand = beam;
        cand.sid.tokens.push_back(k);
        cand.score += lp(k);
        next.push_back(std::move(cand));
      }
    }
    std::sort(next.begin(), next.end(), better);
    if (next.size() > static_cast<std::size_t>(width)) next.resize(static_cast<std::size_t>(width));
    beams = std::move(next);
  }
  return beams;
}

std::map<int, double> hr_at_k(const NextSidModel& model, std::span<const NextSidExample> tests,
                              std::span<const int> k_list, int beam_width) {
  if (k_list.empty()) throw ConfigError("evalsuite", "K list is empty");
  const int max_k = *std::max_element(k_list.begin(), k_list.end());
  if (beam_width == 0) beam_width = max_k;
  if (beam_width < max_k) throw ConfigError("evalsuite", "beam width " + std::to_string(beam_width) + " < max K " + std::to_string(max_k));
  std::map<int, double> hits;
  for (int k : k_list) hits[k] = 0.0;
  if (tests.empty()) return hits;
  for (const auto& test : tests) {
    const auto beams = beam_search(model, test.history, beam_width);
    std::size_t rank = beams.size();
    for (std::size_t r = 0; r < beams.size(); ++r) {
      if (beams[r].sid == test.target) {
        rank = r;
        break;
      }
    }
    for (int k : k_list) {
      if (rank < static_cast<std::size_t>(k)) hits[k] += 1.0;
    }
  }
  for (auto& [k, v] : hits) v /= static_cast<double>(tests.size());
  return hits;
}

Matrix query_features(const ItemCatalog& catalog, std::span<const std::int64_t> ids, std::uint64_t seed) {
  const LeafPrototypes protos = leaf_prototypes(catalog.spec, catalog.tree);
  Matrix x = feature_matrix(catalog, ids);
  const int dv = catalog.spec.visual_dim;
  const int dt = catalog.spec.text_dim;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    Rng rng(derive_seed(seed, 0x9e0000 + static_cast<std::uint64_t>(ids[j])));
    const int leaf = catalog.item(ids[j]).labels[kCategoryLevels - 1];
    for (int d = 0; d < dt; ++d) x(dv + d, col) = protos.text(d, leaf) + catalog.spec.noise_std * rng.normal();
    x.col(col).tail(catalog.spec.attr_dim()).setZero();
  }
  return x;
}

std::vector<std::int64_t> sample_negatives(std::int64_t catalog_size, std::int64_t query, int n_neg,
                                           std::uint64_t seed) {
  if (n_neg < 0 || n_neg >= catalog_size) {
    throw ConfigError("evalsuite", "n_neg must lie in [0, catalog size)");
  }
  std::vector<std::int64_t> pool;
  pool.reserve(static_cast<std::size_t>(catalog_size - 1));
  for (std::int64_t i = 0; i < catalog_size; ++i) {
    if (i != query) pool.push_back(i);
  }
  Rng rng(derive_seed(seed, 0x4e60000 + static_cast<std::uint64_t>(query)));
  for (std::size_t i = 0; i < static_cast<std::size_t>(n_neg); ++i) {
    const std::size_t j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(n_neg));
  return pool;
}

std::map<int, double> retrieval_recall(const Embedder& embed, const ItemCatalog& catalog,
                                       std::span<const std::int64_t> query_ids, std::span<const int> k_list,
                                       int n_neg, std::uint64_t seed, QueryView view) {
  const auto n_items = static_cast<std::int64_t>(catalog.items.size());
  if (n_neg < 0 || n_neg >= n_items) throw ConfigError("evalsuite", "n_neg must lie in [0, catalog size)");
  std::vector<std::int64_t> all(static_cast<std::size_t>(n_items));
  std::iota(all.begin(), all.end(), std::int64_t{0});
  auto unit = [](Matrix m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double norm = m.col(j).norm();
      if (!(norm > 0.0)) throw NumericError("evalsuite", "zero-norm embedding in retrieval");
      m.col(j) /= norm;
    }
    return m;
  };
  const Matrix candidates = unit(embed(feature_matrix(catalog, all)));
  const Matrix queries = unit(embed(view == QueryView::kPerturbed ? query_features(catalog, query_ids, seed)
                                                                   : feature_matrix(catalog, query_ids)));
  std::map<int, double> recall;
  for (int k : k_list) recall[k] = 0.0;
  if (query_ids.empty()) return recall;
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    const std::int64_t id = query_ids[q];
    const auto qv = queries.col(static_cast<Eigen::Index>(q));
    const double positive = qv.dot(candidates.col(id));
    std::size_t rank = 1;
    for (auto neg : sample_negatives(n_items, id, n_neg, seed)) {
      const double s = qv.dot(candidates.col(neg));
      if (s > positive || (s == positive && neg < id)) ++rank;
    }
    for (int k : k_list) {
      if (rank <= static_cast<std::size_t>(k)) recall[k] += 1.0;
    }
  }
  for (auto& [k, v] : recall) v /= static_cast<double>(query_ids.size());
  return recall;
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json hr = nlohmann::json::object();
  for (const auto& [k, v] : r.hit_rate) hr[std::to_string(k)] = v;
  nlohmann::json rc = nlohmann::json::object();
  for (const auto& [k, v] : r.recall) rc[std::to_string(k)] = v;
  return {{"scheme", r.scheme},
          {"seed", r.seed},
          {"config_digest", r.config_digest},
          {"v_measure", r.v_measure},
          {"hr", hr},
          {"recall", rc},
          {"collision_rate", r.collision_rate},
          {"distinct_prefixes", r.distinct_prefixes},
          {"extras", r.extras}};
}

EvalReport eval_report_from_json(const nlohmann::json& doc) {
  try {
    EvalReport r;
    r.scheme = doc.at("scheme").get<std::string>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.config_digest = doc.at("config_digest").get<std::string>();
    r.v_measure = doc.at("v_measure").get<std::vector<double>>();
    for (const auto& [k, v] : doc.at("hr").items()) r.hit_rate[std::stoi(k)] = v.get<double>();
    for (const auto& [k, v] : doc.at("recall").items()) r.recall[std::stoi(k)] = v.get<double>();
    r.collision_rate = doc.at("collision_rate").get<double>();
    r.distinct_prefixes = doc.at("distinct_prefixes").get<std::vector<std::size_t>>();
    if (doc.contains("extras")) r.extras = doc.at("extras").get<std::map<std::string, double>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("evalsuite", std::string("malformed eval report: ") + e.what());
  }
}

void write_eval_csv(const EvalReport& r, std::ostream& out, bool header) {
  if (header) out << "scheme,metric,value\n";
  char line[256];
  auto row = [&](const std::string& metric, double value) {
    std::snprintf(line, sizeof(line), "%s,%s,%.9g\n", r.scheme.c_str(), metric.c_str(), value);
    out << line;
  };
  for (std::size_t l = 0; l < r.v_measure.size(); ++l) row("v_measure_l" + std::to_string(l + 1), r.v_measure[l]);
  for (const auto& [k, v] : r.hit_rate) row("hr@" + std::to_string(k), v);
  for (const auto& [k, v] : r.recall) row("recall@" + std::to_string(k), v);
  row("collision_rate", r.collision_rate);
}

}  // namespace sidforge
