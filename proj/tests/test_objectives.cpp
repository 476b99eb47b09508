#include <cmath>
#include <sstream>

#include "doctest.h"
#include "sidforge/objectives.hpp"
#include "support.hpp"

using namespace sidforge;
using namespace sidforge::testing;

namespace {

ContrastBatch one_level_batch(int n, double tau) {
  ContrastBatch b;
  for (int i = 0; i < n; ++i) b.ids.push_back(i);
  b.temperature = tau;
  b.positives.assign(1, std::vector<std::vector<int>>(static_cast<std::size_t>(n)));
  b.candidates.assign(1, std::vector<std::vector<int>>(static_cast<std::size_t>(n)));
  b.emb_positive.assign(static_cast<std::size_t>(n), -1);
  b.emb_negatives.assign(static_cast<std::size_t>(n), {});
  return b;
}

ItemCatalog small_catalog() {
  CatalogSpec spec;
  spec.num_items = 192;
  spec.branching = {2, 2, 2};
  return generate_catalog(spec);
}

// Direct per-level evaluation of the supervised contrastive formula.
double mg_oracle(const Matrix& logits, const ContrastBatch& b) {
  const Eigen::Index k = logits.rows() / b.levels();
  double total = 0.0;
  for (int l = 0; l < b.levels(); ++l) {
    double level = 0.0;
    int active = 0;
    for (int q = 0; q < b.size(); ++q) {
      const auto& P = b.positives[l][q];
      if (P.empty()) continue;
      ++active;
      auto cosine = [&](int a) {
        const Vector u = logits.block(l * k, q, k, 1);
        const Vector v = logits.block(l * k, a, k, 1);
        return u.dot(v) / (u.norm() * v.norm());
      };
      long double denom = 0.0;
      for (int a : b.candidates[l][q]) denom += std::exp(static_cast<long double>(cosine(a) / b.temperature));
      double term = 0.0;
      for (int p : P) term -= std::log(std::exp(cosine(p) / b.temperature) / static_cast<double>(denom));
      level += term / static_cast<double>(P.size());
    }
    if (active > 0) total += level / active;
  }
  return total / b.levels();
}

}  // namespace

TEST_CASE("sole positive candidate gives zero loss") {
  ContrastBatch b = one_level_batch(2, 0.5);
  b.positives[0][0] = {1};
  b.candidates[0][0] = {1};
  Rng rng(1);
  const Matrix z = random_matrix(4, 2, rng);
  CHECK(mg_contrastive_loss(z, b).loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("two-term softmax hand value") {
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(expected == doctest::Approx(0.3133).epsilon(1e-4));

  ContrastBatch b = one_level_batch(3, 1.0);
  b.positives[0][0] = {1};
  b.candidates[0][0] = {1, 2};
  Matrix z = Matrix::Zero(2, 3);
  z(0, 0) = 1.0;
  z(0, 1) = 1.0;
  z(1, 2) = 1.0;
  CHECK(mg_contrastive_loss(z, b).loss == doctest::Approx(expected).epsilon(1e-12));

  b.emb_positive[0] = 1;
  b.emb_negatives[0] = {2};
  CHECK(emb_contrastive_loss(z, b).loss == doctest::Approx(expected).epsilon(1e-12));

  ContrastBatch lone = one_level_batch(2, 1.0);
  lone.emb_positive[0] = 1;
  CHECK(emb_contrastive_loss(z.leftCols(2), lone).loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("contrastive losses error handling") {
  ContrastBatch b = one_level_batch(3, 1.0);
  b.positives[0][0] = {1};
  b.candidates[0][0] = {1, 2};
  Matrix z = Matrix::Identity(3, 3);
  z.col(2).setZero();
  CHECK_THROWS_AS(mg_contrastive_loss(z, b), NumericError);
  b.temperature = 0.0;
  CHECK_THROWS_AS(mg_contrastive_loss(Matrix::Identity(3, 3), b), ConfigError);
  CHECK_THROWS_AS(emb_contrastive_loss(Matrix::Identity(3, 3), one_level_batch(3, 1.0)), InputError);
}

TEST_CASE("catalog batches nest, exclude self and pair within a leaf") {
  const ItemCatalog c = small_catalog();
  const std::vector<std::int64_t> ids(c.train_ids.begin(), c.train_ids.begin() + 32);
  const ContrastBatch b = make_contrast_batch(c, ids, 0.07);
  CHECK_NOTHROW(validate_contrast_batch(b));
  for (int q = 0; q < b.size(); ++q) {
    for (int l = 0; l + 1 < b.levels(); ++l) {
      for (int p : b.positives[l + 1][q]) {
        const auto& coarse = b.positives[l][q];
        CHECK(std::find(coarse.begin(), coarse.end(), p) != coarse.end());
      }
    }
    const int j = b.emb_positive[q];
    if (j >= 0) CHECK(c.item(ids[q]).labels == c.item(ids[j]).labels);
  }
  ContrastBatch broken = b;
  broken.candidates[0][0].push_back(0);
  CHECK_THROWS_AS(validate_contrast_batch(broken), InputError);
}

TEST_CASE("multi-granularity loss matches a direct formula, is non-negative and scale invariant") {
  const ItemCatalog c = small_catalog();
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::int64_t> ids(c.train_ids.begin() + trial * 16, c.train_ids.begin() + trial * 16 + 16);
    const ContrastBatch b = make_contrast_batch(c, ids, 0.5);
    Matrix z = random_matrix(12, 16, rng);
    const double loss = mg_contrastive_loss(z, b).loss;
    CHECK(loss == doctest::Approx(mg_oracle(z, b)).epsilon(1e-10));
    CHECK(loss >= 0.0);
    z.col(3) *= 7.5;
    CHECK(mg_contrastive_loss(z, b).loss == doctest::Approx(loss).epsilon(1e-10));
  }
}

TEST_CASE("contrastive gradients match finite differences") {
  const ItemCatalog c = small_catalog();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    std::vector<std::int64_t> ids = c.train_ids;
    rng.shuffle(ids);
    ids.resize(8);
    const ContrastBatch b = make_contrast_batch(c, ids, 0.5);
    Matrix z = random_matrix(9, 8, rng);
    ParamList<double> params;
    append_params(z, params);

    bool mg_active = false;
    for (const auto& level : b.positives) {
      for (const auto& p : level) mg_active = mg_active || !p.empty();
    }
    if (mg_active) {
      const Matrix g = mg_contrastive_loss(z, b).grad;
      ConstParamList<double> grads;
      append_params(g, grads);
      const auto rep = finite_diff_check([&] { return mg_contrastive_loss(z, b).loss; }, params, grads, 1e-4, 1e-4);
      CHECK(rep.passed);
    }
    if (std::any_of(b.emb_positive.begin(), b.emb_positive.end(), [](int j) { return j >= 0; })) {
      const Matrix g = emb_contrastive_loss(z, b).grad;
      ConstParamList<double> grads;
      append_params(g, grads);
      const auto rep = finite_diff_check([&] { return emb_contrastive_loss(z, b).loss; }, params, grads, 1e-4, 1e-4);
      CHECK(rep.passed);
    }
  }
}

TEST_CASE("total loss arithmetic") {
  CHECK(total_loss(1, 2, 3, 0.1) == doctest::Approx(3.3));
  CHECK(total_loss(1, 2, 100, 0.0) == 3.0);
  CHECK(total_loss(2.5, 2.5, 2.5, 1.0) == doctest::Approx(7.5));
  CHECK(total_loss(1, 2, 3, 0.7) - total_loss(1, 2, 3, 0.2) == doctest::Approx(0.5 * 3));
}

TEST_CASE("training config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(validate_train_config(cfg));
  cfg.batch_size = 1;
  CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
  cfg = {};
  cfg.lambda = -0.1;
  CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
}

TEST_CASE("training loop: zero epochs, determinism, progress and CSV") {
  const ItemCatalog c = small_catalog();
  TrainConfig cfg;
  cfg.model.codebook_size = 8;
  cfg.model.hidden_dim = 32;
  cfg.model.embedding_dim = 16;
  cfg.epochs = 0;
  const auto init = train_unisid(c, cfg);
  UniSidModel fresh = make_unisid_model(cfg.model, c.spec.feature_dim(), make_summary_vocab(c.tree));
  init_unisid_model(fresh, cfg.seed);
  CHECK(init.model == fresh);
  CHECK(init.report.steps.empty());

  cfg.epochs = 6;
  cfg.warmup_epochs = 3;
  cfg.learning_rate = 3e-3;
  const auto a = train_unisid(c, cfg);
  const auto b = train_unisid(c, cfg);
  CHECK(a.report == b.report);
  CHECK(a.model == b.model);
  CHECK(a.report.mean_total(5) < a.report.mean_total(0));
  for (const auto& r : a.report.steps) {
    CHECK(std::isfinite(r.total));
    CHECK(r.total == doctest::Approx(total_loss(r.sid, r.emb, r.rec, cfg.lambda)).epsilon(1e-12));
  }
  std::ostringstream csv;
  write_loss_csv(a.report, csv);
  const std::string text = csv.str();
  CHECK(text.rfind("step,L_sid,L_emb,L_rec,L_total\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) == a.report.steps.size() + 1);
}
