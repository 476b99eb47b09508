#include <set>
#include <sstream>

#include "doctest.h"
#include "sidforge/rq.hpp"
#include "support.hpp"

using namespace sidforge;
using namespace sidforge::testing;

namespace {

Codebook hand_codebook() {
  Codebook cb;
  cb.levels = 2;
  cb.codebook_size = 2;
  cb.dim = 2;
  Matrix l1(2, 2), l2(2, 2);
  l1 << 0, 4, 0, 4;
  l2 << 0, 1, 0, 0;
  cb.codewords = {l1, l2};
  return cb;
}

// Per-level linear scan with strict improvement (lowest index on ties).
SidSequence brute_force(const Codebook& cb, Vector r) {
  SidSequence s;
  for (const auto& c : cb.codewords) {
    int best = 0;
    for (int k = 1; k < c.cols(); ++k) {
      if ((r - c.col(k)).squaredNorm() < (r - c.col(best)).squaredNorm()) best = k;
    }
    s.tokens.push_back(best);
    r -= c.col(best);
  }
  return s;
}

Matrix clustered(int per_cluster, const Matrix& centers, double radius, Rng& rng) {
  Matrix x(centers.rows(), per_cluster * centers.cols());
  for (Eigen::Index c = 0; c < centers.cols(); ++c) {
    for (int i = 0; i < per_cluster; ++i) {
      x.col(c * per_cluster + i) = centers.col(c) + radius * random_matrix(centers.rows(), 1, rng);
    }
  }
  return x;
}

}  // namespace

TEST_CASE("hand residual example") {
  Vector v(2);
  v << 5, 4;
  const auto a = rq_assign(hand_codebook(), v);
  CHECK(a.sid.tokens == std::vector<int>{1, 1});
  CHECK(a.trace.norms.back() == doctest::Approx(0.0));
  CHECK((rq_reconstruct(hand_codebook(), a.sid) - v).norm() < 1e-12);
}

TEST_CASE("exact codeword input and dimension errors") {
  Rng rng(2);
  Codebook cb;
  cb.levels = 3;
  cb.codebook_size = 5;
  cb.dim = 4;
  for (int l = 0; l < 3; ++l) cb.codewords.push_back(random_matrix(4, 5, rng));
  cb.codewords[1].col(2).setZero();
  cb.codewords[2].col(4).setZero();
  const auto a = rq_assign(cb, cb.codewords[0].col(3));
  CHECK(a.sid.tokens == std::vector<int>{3, 2, 4});
  CHECK(a.trace.norms[1] == doctest::Approx(0.0));
  CHECK_THROWS_AS(rq_assign(cb, Vector::Zero(3)), ShapeError);
}

TEST_CASE("assignment matches brute force and chosen codewords minimize each residual") {
  Rng rng(3);
  Codebook cb;
  cb.levels = 3;
  cb.codebook_size = 8;
  cb.dim = 6;
  for (int l = 0; l < 3; ++l) cb.codewords.push_back(random_matrix(6, 8, rng, 1.0 / (l + 1)));
  for (int i = 0; i < 500; ++i) {
    const Vector v = random_matrix(6, 1, rng);
    const auto a = rq_assign(cb, v);
    CHECK(a.sid == brute_force(cb, v));
    Vector r = v;
    for (int l = 0; l < 3; ++l) {
      const double chosen = (r - cb.codewords[l].col(a.sid[l])).norm();
      CHECK(a.trace.norms[l + 1] == doctest::Approx(chosen));
      for (int k = 0; k < 8; ++k) CHECK(chosen <= (r - cb.codewords[l].col(k)).norm() + 1e-12);
      r -= cb.codewords[l].col(a.sid[l]);
    }
  }
}

TEST_CASE("fit saturates, is deterministic and recovers separated centers") {
  Rng rng(4);
  const Matrix pts = random_matrix(3, 6, rng);
  const Codebook sat = rq_kmeans_fit(pts, 3, 6, 1);
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    const auto a = rq_assign(sat, pts.col(j));
    CHECK(a.trace.norms[1] < 1e-9);
  }
  CHECK(rq_kmeans_fit(pts, 2, 3, 9) == rq_kmeans_fit(pts, 2, 3, 9));
  CHECK_THROWS(rq_kmeans_fit(pts, 2, 7, 1));

  Matrix centers(2, 2);
  centers << -5, 5, 1, -1;
  const Matrix x = clustered(20, centers, 0.1, rng);
  const Codebook cb = rq_kmeans_fit(x, 2, 2, 3);
  // Exhaustive 2-partition oracle restricted to contiguous cluster splits is
  // the two true groups; check each center is matched by a level-1 codeword.
  for (Eigen::Index c = 0; c < 2; ++c) {
    const double d = std::min((cb.codewords[0].col(0) - centers.col(c)).norm(),
                              (cb.codewords[0].col(1) - centers.col(c)).norm());
    CHECK(d < 0.1);
  }
  std::set<int> first;
  for (Eigen::Index j = 0; j < x.cols(); ++j) first.insert(rq_assign(cb, x.col(j)).sid[0] * 2 + (j < 20 ? 0 : 1));
  CHECK(first.size() == 2);
}

TEST_CASE("exhaustive partition oracle on a small set") {
  Rng rng(6);
  Matrix centers(2, 2);
  centers << 0, 3, 0, 3;
  const Matrix x = clustered(5, centers, 0.3, rng);
  const int n = static_cast<int>(x.cols());
  double best = std::numeric_limits<double>::infinity();
  for (int mask = 1; mask < (1 << n) - 1; ++mask) {
    Vector m0 = Vector::Zero(2), m1 = Vector::Zero(2);
    int c0 = 0, c1 = 0;
    for (int j = 0; j < n; ++j) {
      if (mask >> j & 1) { m1 += x.col(j); ++c1; } else { m0 += x.col(j); ++c0; }
    }
    m0 /= c0;
    m1 /= c1;
    double sse = 0.0;
    for (int j = 0; j < n; ++j) sse += (x.col(j) - ((mask >> j & 1) ? m1 : m0)).squaredNorm();
    best = std::min(best, sse);
  }
  const Codebook cb = rq_kmeans_fit(x, 1, 2, 11);
  double sse = 0.0;
  for (int j = 0; j < n; ++j) sse += std::pow(rq_assign(cb, x.col(j)).trace.norms[1], 2);
  CHECK(sse == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("rq-vae zero epochs, determinism and surrogate gradients") {
  Rng rng(7);
  const Matrix feats = random_matrix(10, 64, rng);
  RqVaeConfig cfg;
  cfg.levels = 2;
  cfg.codebook_size = 4;
  cfg.latent_dim = 4;
  cfg.hidden_dim = 8;
  cfg.batch_size = 16;
  cfg.epochs = 0;
  const auto init = rq_vae_fit(feats, cfg);
  CHECK(init.trace.empty());
  // Untrained codebook is a k-means fixed point of the initial encodings.
  Matrix residual = rq_vae_encode(init.model, feats);
  for (int l = 0; l < 2; ++l) {
    const Matrix& c = init.model.codebook.codewords[l];
    Matrix sums = Matrix::Zero(c.rows(), c.cols());
    Vector counts = Vector::Zero(c.cols());
    std::vector<int> tok(feats.cols());
    for (Eigen::Index j = 0; j < feats.cols(); ++j) {
      tok[j] = rq_assign(Codebook{1, 4, 4, {c}}, residual.col(j)).sid[0];
      sums.col(tok[j]) += residual.col(j);
      counts(tok[j]) += 1.0;
    }
    for (int k = 0; k < 4; ++k) {
      if (counts(k) > 0) CHECK((sums.col(k) / counts(k) - c.col(k)).norm() < 1e-5);
    }
    for (Eigen::Index j = 0; j < feats.cols(); ++j) residual.col(j) -= c.col(tok[j]);
  }

  cfg.epochs = 3;
  const auto a = rq_vae_fit(feats, cfg);
  const auto b = rq_vae_fit(feats, cfg);
  CHECK(a.trace == b.trace);
  CHECK(a.model == b.model);
  std::ostringstream csv;
  write_rq_vae_csv(a.trace, csv);
  CHECK(csv.str().find('\n') != std::string::npos);

  RqVaeModel m = a.model;
  const FrozenQuantizer frozen = freeze_quantizer(m, feats.leftCols(16));
  const RqVaeLoss l = rq_vae_loss(m, feats.leftCols(16), frozen);
  CHECK(l.total == doctest::Approx(l.recon + l.commit));
  ParamList<double> params;
  append_params(m.encoder, params);
  append_params(m.decoder, params);
  ConstParamList<double> grads;
  append_params(l.encoder_grad, grads);
  append_params(l.decoder_grad, grads);
  const auto rep = finite_diff_check(
      [&] {
        const RqVaeLoss x = rq_vae_loss(m, feats.leftCols(16), frozen);
        return FdProbe{x.total, x.regime};
      },
      params, grads, 1e-4, 1e-4);
  CHECK(rep.passed);
}

TEST_CASE("quantized autoencoder approaches the plain autoencoder on clustered data") {
  Rng rng(8);
  Matrix centers = random_matrix(6, 4, rng, 3.0);
  const double radius = 0.05;
  const Matrix x = clustered(32, centers, radius, rng);
  RqVaeConfig cfg;
  cfg.levels = 1;
  cfg.codebook_size = 4;
  cfg.latent_dim = 6;
  cfg.hidden_dim = 32;
  cfg.batch_size = 32;
  cfg.epochs = 60;
  cfg.learning_rate = 3e-3;
  const auto q = rq_vae_fit(x, cfg);
  cfg.quantize = false;
  const auto plain = rq_vae_fit(x, cfg);
  const double q_err = q.trace.back().recon;
  const double plain_err = plain.trace.back().recon;
  CHECK(q_err < plain_err + 6.0 * radius * radius + 0.05);
}
