#include <unordered_map>

#include "doctest.h"
#include "sidforge/unisid.hpp"
#include "support.hpp"

using namespace sidforge;
using namespace sidforge::testing;

namespace {

ItemCatalog small_catalog(int n = 128) {
  CatalogSpec spec;
  spec.num_items = n;
  return generate_catalog(spec);
}

UniSidModel small_model(const ItemCatalog& c, std::uint64_t seed) {
  UniSidConfig cfg;
  cfg.codebook_size = 8;
  cfg.hidden_dim = 16;
  cfg.embedding_dim = 8;
  cfg.recon_dim = 8;
  cfg.decoder_hidden = 8;
  UniSidModel m = make_unisid_model(cfg, c.spec.feature_dim(), make_summary_vocab(c.tree));
  init_unisid_model(m, seed);
  return m;
}

SidSequence scan_oracle(const Vector& logits, int levels, int k) {
  SidSequence s;
  for (int l = 0; l < levels; ++l) {
    int best = 0;
    for (int j = 1; j < k; ++j) {
      if (logits(l * k + j) > logits(l * k + best)) best = j;
    }
    s.tokens.push_back(best);
  }
  return s;
}

}  // namespace

TEST_CASE("model shapes follow the head contracts") {
  const ItemCatalog c = small_catalog();
  const UniSidModel m = small_model(c, 1);
  CHECK(m.sid_head.output_dim() == 3 * 8);
  CHECK(m.emb_head.input_dim() == 16 + 3 * 8);
  CHECK(m.encoder.input_dim() == c.spec.feature_dim());
}

TEST_CASE("assign_sid argmax and tie rule") {
  Vector block(3);
  block << 0.1, 2.0, -1.0;
  CHECK(assign_sid(block, 1, 3).tokens == std::vector<int>{1});
  CHECK(assign_sid(Vector::Constant(3, 0.5), 1, 3).tokens == std::vector<int>{0});
  Vector nan = Vector::Zero(3);
  nan(2) = std::nan("");
  CHECK_THROWS_AS(assign_sid(nan, 1, 3), NumericError);
}

TEST_CASE("assign_sid matches a scan oracle and is shift/scale invariant") {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vector logits = random_matrix(12, 1, rng);
    const SidSequence s = assign_sid(logits, 3, 4);
    CHECK(s == scan_oracle(logits, 3, 4));
    const Vector moved = (logits.array() * 2.5 + 7.0).matrix();
    CHECK(assign_sid(moved, 3, 4) == s);
  }
}

TEST_CASE("bias-forced argmax with a zero encoder yields tokens 0,1,2") {
  const ItemCatalog c = small_catalog();
  UniSidModel m = small_model(c, 2);
  for (auto& layer : m.encoder.layers) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
  auto& head = m.sid_head.layers.back();
  head.bias.setZero();
  for (int l = 0; l < 3; ++l) head.bias(l * 8 + l) = 1.0;
  CHECK(forward(m, c.items[3]).sid.tokens == std::vector<int>{0, 1, 2});
}

TEST_CASE("forward is pure and consistent with the batch path") {
  const ItemCatalog c = small_catalog();
  const UniSidModel m = small_model(c, 4);
  Item twin = c.items[10];
  twin.id = 999;
  const ItemForward a = forward(m, c.items[10]);
  const ItemForward b = forward(m, twin);
  CHECK(a.sid == b.sid);
  CHECK(a.embedding == b.embedding);
  CHECK(a.sid == scan_oracle(a.logits, 3, 8));
  const std::vector<std::int64_t> ids{10, 11};
  const auto batch = forward_batch(m, feature_matrix(c, ids));
  CHECK((batch.embeddings.col(0) - a.embedding).norm() < 1e-12);
  CHECK_THROWS_AS(forward_batch(m, Matrix::Zero(5, 1)), ShapeError);
}

TEST_CASE("assign_catalog statistics and thread invariance") {
  const ItemCatalog c = small_catalog(100);
  const UniSidModel m = small_model(c, 5);
  const auto one = assign_catalog(m, c, 1);
  const auto four = assign_catalog(m, c, 4);
  CHECK(one.table.sids == four.table.sids);
  std::map<std::vector<int>, int> counts;
  for (const auto& [id, sid] : one.table.sids) ++counts[sid.tokens];
  int colliding = 0;
  for (const auto& [id, sid] : one.table.sids) colliding += counts[sid.tokens] > 1;
  CHECK(one.stats.collision_rate == doctest::Approx(colliding / 100.0));
  for (std::size_t l = 1; l < one.stats.distinct_prefixes.size(); ++l) {
    CHECK(one.stats.distinct_prefixes[l] >= one.stats.distinct_prefixes[l - 1]);
  }

  UniSidModel constant = m;
  for (auto& layer : constant.sid_head.layers) layer.weight.setZero();
  CHECK(assign_catalog(constant, c).stats.collision_rate == 1.0);

  CatalogSpec single;
  single.branching = {1, 1, 1};
  single.num_items = 1;
  single.test_fraction = 0.0;
  const ItemCatalog tiny = generate_catalog(single);
  UniSidModel tm = make_unisid_model(m.config, tiny.spec.feature_dim(), make_summary_vocab(tiny.tree));
  init_unisid_model(tm, 1);
  CHECK(assign_catalog(tm, tiny).stats.collision_rate == 0.0);
}

TEST_CASE("fresh models are float-representable") {
  const ItemCatalog c = small_catalog();
  const UniSidModel m = small_model(c, 6);
  for (auto p : parameters(m)) {
    for (double v : p) CHECK(static_cast<double>(static_cast<float>(v)) == v);
  }
}
