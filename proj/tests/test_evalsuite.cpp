#include <cmath>
#include <map>
#include <sstream>

#include "doctest.h"
#include "sidforge/evalsuite.hpp"
#include "support.hpp"

using namespace sidforge;
using namespace sidforge::testing;

namespace {

double plogp_sum(const std::map<std::int64_t, double>& counts, double n) {
  double h = 0.0;
  for (const auto& [k, c] : counts) h -= c / n * std::log(c / n);
  return h;
}

// Homogeneity/completeness through the mutual-information form.
VMeasure mi_oracle(const std::vector<std::int64_t>& c, const std::vector<std::int64_t>& y) {
  const double n = static_cast<double>(c.size());
  std::map<std::int64_t, double> nc, ny;
  std::map<std::pair<std::int64_t, std::int64_t>, double> joint;
  for (std::size_t i = 0; i < c.size(); ++i) {
    nc[c[i]] += 1;
    ny[y[i]] += 1;
    joint[{c[i], y[i]}] += 1;
  }
  double mi = 0.0;
  for (const auto& [key, v] : joint) mi += v / n * std::log(v * n / (nc[key.first] * ny[key.second]));
  const double hc = plogp_sum(nc, n);
  const double hy = plogp_sum(ny, n);
  VMeasure out;
  out.homogeneity = hy == 0.0 ? 1.0 : mi / hy;
  out.completeness = hc == 0.0 ? 1.0 : mi / hc;
  const double s = out.homogeneity + out.completeness;
  out.v = s == 0.0 ? 0.0 : 2.0 * out.homogeneity * out.completeness / s;
  return out;
}

ItemCatalog small_catalog() {
  CatalogSpec spec;
  spec.num_items = 256;
  return generate_catalog(spec);
}

SidTable label_table(const ItemCatalog& c) {
  SidTable t;
  t.levels = 3;
  t.codebook_size = 64;
  for (const auto& item : c.items) t.sids[item.id] = SidSequence{{item.labels[0], item.labels[1], item.labels[2]}};
  return t;
}

NextSidModel random_next_sid(int levels, int k, std::uint64_t seed) {
  NextSidConfig cfg;
  cfg.dim = 6;
  cfg.hidden = 8;
  cfg.history = 3;
  NextSidModel m = make_next_sid_model(levels, k, cfg);
  Rng rng(seed);
  m.token_table = random_matrix(m.token_table.rows(), m.token_table.cols(), rng);
  for (auto& s : m.scorers) {
    for (auto& layer : s.layers) {
      layer.weight = random_matrix(layer.weight.rows(), layer.weight.cols(), rng, 0.8);
      layer.bias = random_matrix(layer.bias.rows(), 1, rng, 0.3);
    }
  }
  return m;
}

std::vector<NextSidExample> random_examples(int n, int levels, int k, int history, Rng& rng) {
  auto sid = [&] {
    SidSequence s;
    for (int l = 0; l < levels; ++l) s.tokens.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(k))));
    return s;
  };
  std::vector<NextSidExample> out(static_cast<std::size_t>(n));
  for (auto& e : out) {
    const int h = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(history)));
    for (int i = 0; i < h; ++i) e.history.push_back(sid());
    e.target = sid();
  }
  return out;
}

}  // namespace

TEST_CASE("v-measure edge cases and hand oracle") {
  const std::vector<std::int64_t> y{0, 0, 1, 1};
  const auto perfect = v_measure(y, y);
  CHECK(perfect.v == 1.0);
  CHECK(perfect.homogeneity == 1.0);
  CHECK(v_measure(std::vector<std::int64_t>{5, 5, 5, 5}, y).v == 0.0);

  const std::vector<std::int64_t> c{0, 0, 0, 1};
  const double ln2 = std::log(2.0);
  const double h_y_given_c = 0.75 * -(2.0 / 3 * std::log(2.0 / 3) + 1.0 / 3 * std::log(1.0 / 3));
  const double h_c = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
  const double h = 1.0 - h_y_given_c / ln2;
  const double comp = 1.0 - 0.5 * ln2 / h_c;
  const auto got = v_measure(c, y);
  CHECK(got.homogeneity == doctest::Approx(h).epsilon(1e-12));
  CHECK(got.completeness == doctest::Approx(comp).epsilon(1e-12));
  CHECK(got.v == doctest::Approx(2 * h * comp / (h + comp)).epsilon(1e-12));
  CHECK_THROWS_AS(v_measure(std::vector<std::int64_t>{0}, y), InputError);
}

TEST_CASE("v-measure matches the mutual-information oracle and is permutation invariant") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(200));
    const auto kc = 1 + rng.below(8);
    const auto ky = 1 + rng.below(8);
    std::vector<std::int64_t> c(n), y(n), relabeled(n);
    for (int i = 0; i < n; ++i) {
      c[i] = static_cast<std::int64_t>(rng.below(kc));
      y[i] = static_cast<std::int64_t>(rng.below(ky));
      relabeled[i] = 1000 - 7 * c[i];
    }
    const auto got = v_measure(c, y);
    const auto want = mi_oracle(c, y);
    CHECK(std::abs(got.v - want.v) < 1e-9);
    CHECK(std::abs(got.homogeneity - want.homogeneity) < 1e-9);
    CHECK(std::abs(got.completeness - want.completeness) < 1e-9);
    CHECK(got.v >= 0.0);
    CHECK(got.v <= 1.0 + 1e-12);
    CHECK(std::abs(v_measure(relabeled, y).v - got.v) < 1e-12);
    const auto table = build_contingency(c, y);
    double total = 0.0;
    for (double t : table.cluster_totals) total += t;
    CHECK(total == table.total);
  }
}

TEST_CASE("prefix v-measure: label paths, constant tables and a grouping oracle") {
  const ItemCatalog c = small_catalog();
  const SidTable labels = label_table(c);
  CHECK(sid_level_vmeasure(labels, c, 3, c.test_ids) == doctest::Approx(1.0));
  SidTable constant = labels;
  for (auto& [id, s] : constant.sids) s = SidSequence{{0, 0, 0}};
  for (int l = 1; l <= 3; ++l) CHECK(sid_level_vmeasure(constant, c, l, c.test_ids) == 0.0);

  Rng rng(12);
  SidTable random = labels;
  random.codebook_size = 3;
  for (auto& [id, s] : random.sids) {
    s = SidSequence{{static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3))}};
  }
  std::vector<std::int64_t> ids(c.train_ids.begin(), c.train_ids.begin() + 200);
  for (int l = 1; l <= 3; ++l) {
    std::vector<std::int64_t> clusters, leaves;
    for (auto id : ids) {
      std::int64_t key = 0;
      for (int i = 0; i < l; ++i) key = key * 10 + random.at(id)[i] + 1;
      clusters.push_back(key);
      leaves.push_back(c.item(id).labels[2]);
    }
    CHECK(sid_level_vmeasure(random, c, l, ids) == doctest::Approx(mi_oracle(clusters, leaves).v).epsilon(1e-12));
  }
  SidTable missing = labels;
  missing.sids.erase(c.test_ids.front());
  CHECK_THROWS_AS(sid_level_vmeasure(missing, c, 1, c.test_ids), InputError);
}

TEST_CASE("user sequences: determinism, degenerate preference and preferred share") {
  CatalogSpec spec;
  const ItemCatalog c = generate_catalog(spec);
  UserSimConfig cfg;
  const auto a = gen_user_sequences(c, cfg);
  const auto b = gen_user_sequences(c, cfg);
  REQUIRE(a.size() == 2000);
  for (std::size_t u = 0; u < a.size(); ++u) CHECK(a[u].items == b[u].items);

  // Top-2 level-2 nodes per user stand in for the unobserved preferences; a
  // uniform draw lands inside them with probability 2/16.
  double inside = 0.0, total = 0.0;
  for (const auto& seq : a) {
    std::map<int, int> counts;
    for (auto id : seq.items) ++counts[c.item(id).labels[1]];
    std::vector<int> sorted;
    for (const auto& [node, n] : counts) sorted.push_back(n);
    std::sort(sorted.rbegin(), sorted.rend());
    inside += sorted[0] + (sorted.size() > 1 ? sorted[1] : 0);
    total += static_cast<double>(seq.items.size());
  }
  const double share = inside / total;
  const double expected = 0.8 + 0.2 * 2.0 / 16.0;
  CHECK(std::abs(share - expected) < 0.03);

  cfg.preference = 1.0;
  cfg.preferred_nodes = 1;
  cfg.n_users = 50;
  for (const auto& seq : gen_user_sequences(c, cfg)) {
    for (auto id : seq.items) CHECK(c.item(id).labels[1] == c.item(seq.items[0]).labels[1]);
  }
  cfg.length = static_cast<int>(c.items.size());
  CHECK_THROWS_AS(gen_user_sequences(c, cfg), ConfigError);
}

TEST_CASE("next-SID examples layout") {
  const ItemCatalog c = small_catalog();
  const SidTable t = label_table(c);
  UserSimConfig cfg;
  cfg.n_users = 3;
  cfg.length = 8;
  const auto seqs = gen_user_sequences(c, cfg);
  const auto train = next_sid_examples(seqs, t, 5, false);
  const auto test = next_sid_examples(seqs, t, 5, true);
  CHECK(train.size() == 3 * 6);
  CHECK(test.size() == 3);
  CHECK(test[0].target == t.at(seqs[0].items.back()));
  CHECK(test[0].history.size() == 5);
  CHECK(test[0].history.back() == t.at(seqs[0].items[6]));
  CHECK(train[0].history.size() == 1);
  SidTable missing = t;
  missing.sids.erase(seqs[0].items[3]);
  CHECK_THROWS_AS(next_sid_examples(seqs, missing, 5, false), InputError);
}

TEST_CASE("untrained next-SID loss is ln K per level") {
  NextSidConfig cfg;
  const NextSidModel m = make_next_sid_model(3, 16, cfg);
  Rng rng(13);
  const auto ex = random_examples(20, 3, 16, 5, rng);
  const auto loss = next_sid_loss(m, ex);
  for (double l : loss.per_level) CHECK(l == doctest::Approx(std::log(16.0)).epsilon(1e-12));
  CHECK(loss.loss == doctest::Approx(3 * std::log(16.0)).epsilon(1e-12));
}

TEST_CASE("next-SID gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    NextSidModel m = random_next_sid(3, 4, seed);
    Rng rng(100 + seed);
    const auto ex = random_examples(6, 3, 4, 3, rng);
    const NextSidLoss l = next_sid_loss(m, ex);
    ParamList<double> params;
    append_params(m.token_table, params);
    for (auto& s : m.scorers) append_params(s, params);
    ConstParamList<double> grads;
    append_params(l.token_table_grad, grads);
    for (const auto& s : l.scorer_grads) append_params(s, grads);
    const auto rep = finite_diff_check(
        [&] {
          const NextSidLoss x = next_sid_loss(m, ex);
          return FdProbe{x.loss, x.regime};
        },
        params, grads, 1e-4, 1e-4);
    CHECK(rep.passed);
  }
}

TEST_CASE("next-SID training memorizes a repeated sequence and is deterministic") {
  Rng rng(14);
  auto one = random_examples(1, 3, 8, 3, rng);
  std::vector<NextSidExample> ex(64, one[0]);
  NextSidConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-2;
  const auto a = train_next_sid(ex, 3, 8, cfg);
  const auto b = train_next_sid(ex, 3, 8, cfg);
  CHECK(a.epoch_loss == b.epoch_loss);
  CHECK(a.epoch_loss.back() < 0.05);
}

TEST_CASE("beam search equals exhaustive scoring on a tiny instance") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const NextSidModel m = random_next_sid(2, 3, seed);
    Rng rng(200 + seed);
    const auto tests = random_examples(5, 2, 3, 3, rng);
    for (const auto& t : tests) {
      const Vector hist = pooled_history(m, t.history);
      std::vector<ScoredSid> all;
      const Vector first = next_level_log_probs(m, hist, {});
      for (int a = 0; a < 3; ++a) {
        const std::array<int, 1> prefix{a};
        const Vector second = next_level_log_probs(m, hist, prefix);
        for (int b = 0; b < 3; ++b) all.push_back({SidSequence{{a, b}}, first(a) + second(b)});
      }
      std::sort(all.begin(), all.end(), [](const ScoredSid& x, const ScoredSid& y) {
        return x.score != y.score ? x.score > y.score : x.sid < y.sid;
      });
      const auto beams = beam_search(m, t.history, 9);
      REQUIRE(beams.size() == 9);
      for (std::size_t i = 0; i < 9; ++i) {
        CHECK(beams[i].sid == all[i].sid);
        CHECK(beams[i].score == all[i].score);
      }
    }
    std::vector<int> ks{1, 2, 5, 9};
    const auto hr = hr_at_k(m, tests, ks, 9);
    CHECK(hr.at(9) == 1.0);
    for (std::size_t i = 1; i < ks.size(); ++i) CHECK(hr.at(ks[i]) >= hr.at(ks[i - 1]));
  }
}

TEST_CASE("rigged next-SID model hits at 1 and beam width is validated") {
  NextSidConfig cfg;
  cfg.history = 2;
  NextSidModel m = make_next_sid_model(3, 5, cfg);
  const SidSequence target{{4, 1, 3}};
  for (int l = 0; l < 3; ++l) m.scorers[l].layers.back().bias(target[l]) = 10.0;
  Rng rng(15);
  auto tests = random_examples(10, 3, 5, 2, rng);
  for (auto& t : tests) t.target = target;
  const std::vector<int> ks{1, 5};
  CHECK(hr_at_k(m, tests, ks).at(1) == 1.0);
  CHECK_THROWS_AS(hr_at_k(m, tests, ks, 3), ConfigError);
}

TEST_CASE("retrieval: singleton pool, self retrieval, sort oracle and monotonicity") {
  const ItemCatalog c = small_catalog();
  Rng rng(16);
  const Matrix proj = random_matrix(8, c.spec.feature_dim(), rng);
  const Embedder embed = [&](const Matrix& x) -> Matrix { return proj * x; };
  const Embedder identity = [](const Matrix& x) -> Matrix { return x; };
  const std::vector<int> ks{1, 5, 10, 20};

  CHECK(retrieval_recall(embed, c, c.test_ids, ks, 0, 1).at(1) == 1.0);
  CHECK(retrieval_recall(identity, c, c.test_ids, ks, 99, 1, QueryView::kUnperturbed).at(1) == 1.0);
  CHECK_THROWS_AS(retrieval_recall(embed, c, c.test_ids, ks, 256, 1), ConfigError);

  std::vector<std::int64_t> queries(c.train_ids.begin(), c.train_ids.begin() + 50);
  const int n_neg = 9;
  const std::uint64_t seed = 3;
  const Matrix q = query_features(c, queries, seed);
  std::map<int, double> oracle;
  for (int k : ks) oracle[k] = 0.0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::vector<std::int64_t> pool = sample_negatives(256, queries[i], n_neg, seed);
    pool.push_back(queries[i]);
    const Vector qe = proj * q.col(static_cast<Eigen::Index>(i));
    std::vector<std::pair<double, std::int64_t>> scored;
    for (auto id : pool) {
      const Vector e = proj * item_features(c.item(id));
      scored.push_back({-qe.dot(e) / (qe.norm() * e.norm()), id});
    }
    std::sort(scored.begin(), scored.end());
    std::size_t rank = 0;
    while (scored[rank].second != queries[i]) ++rank;
    for (int k : ks) oracle[k] += rank < static_cast<std::size_t>(k) ? 1.0 / 50 : 0.0;
  }
  const auto got = retrieval_recall(embed, c, queries, ks, n_neg, seed);
  for (int k : ks) CHECK(got.at(k) == doctest::Approx(oracle.at(k)).epsilon(1e-12));

  const auto small = sample_negatives(256, 7, 10, seed);
  const auto large = sample_negatives(256, 7, 50, seed);
  CHECK(std::equal(small.begin(), small.end(), large.begin()));
  CHECK(std::find(large.begin(), large.end(), 7) == large.end());
  double prev = 1.0;
  for (int neg : {0, 9, 49, 99, 199}) {
    const auto r = retrieval_recall(embed, c, c.test_ids, ks, neg, seed);
    CHECK(r.at(1) <= prev);
    prev = r.at(1);
    for (std::size_t i = 1; i < ks.size(); ++i) CHECK(r.at(ks[i]) >= r.at(ks[i - 1]));
  }
}

TEST_CASE("eval report serialisation") {
  EvalReport r;
  r.scheme = "unisid";
  r.seed = 9;
  r.config_digest = "abc";
  r.v_measure = {0.5, 0.25, 0.125};
  r.hit_rate = {{1, 0.1}, {5, 0.2}};
  r.recall = {{1, 0.3}};
  r.collision_rate = 0.5;
  r.distinct_prefixes = {4, 8, 16};
  r.extras["x"] = 1.5;
  CHECK(eval_report_from_json(eval_report_to_json(r)) == r);
  std::ostringstream csv;
  write_eval_csv(r, csv);
  const std::string text = csv.str();
  CHECK(text.rfind("scheme,metric,value\n", 0) == 0);
  CHECK(text.find("unisid,hr@5,0.2\n") != std::string::npos);
  CHECK(text.find("unisid,v_measure_l1,0.5\n") != std::string::npos);
  CHECK_THROWS_AS(eval_report_from_json(nlohmann::json::parse("{\"scheme\": 3}")), InputError);
}
