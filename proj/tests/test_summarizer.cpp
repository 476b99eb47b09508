#include <set>

#include "doctest.h"
#include "sidforge/summarizer.hpp"
#include "support.hpp"

using namespace sidforge;
using namespace sidforge::testing;

namespace {

ItemCatalog small_catalog() {
  CatalogSpec spec;
  spec.num_items = 128;
  return generate_catalog(spec);
}

ReconPipeline random_pipeline(const SummaryVocab& vocab, std::uint64_t seed) {
  ReconPipeline p = make_recon_pipeline(6, 4, 5, 7, vocab);
  Rng rng(seed);
  init_recon_pipeline(p, rng);
  for (auto& layer : p.decoder.layers) layer.bias = random_matrix(layer.bias.rows(), 1, rng, 0.3);
  return p;
}

// ReLU pattern of the decoder over every teacher-forced position.
std::uint64_t decoder_regime(const ReconPipeline& p, const Matrix& h, const std::vector<SummarySequence>& targets) {
  Matrix x(p.decoder.input_dim(), h.cols() * kSummaryLength);
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    const auto& tokens = targets[static_cast<std::size_t>(j)].tokens;
    for (int t = 0; t < kSummaryLength; ++t) {
      x.col(j * kSummaryLength + t) =
          decoder_input(h.col(j), std::span<const int>(tokens.data(), static_cast<std::size_t>(t)), p.vocab_size());
    }
  }
  return relu_regime(p.decoder, mlp_apply(p.decoder, x).cache);
}

}  // namespace

TEST_CASE("vocabulary layout and limits") {
  const ItemCatalog c = small_catalog();
  const SummaryVocab v = make_summary_vocab(c.tree);
  CHECK(v.token(kBeginToken) == "<bos>");
  CHECK(v.token(kEndToken) == "<eos>");
  CHECK(v.size() <= kMaxVocabSize);
  int traits = 0;
  for (const auto& t : v.tokens()) traits += t.rfind("trait:", 0) == 0;
  CHECK(traits == kTraitCount);
  CHECK_THROWS_AS(SummaryVocab({"<bos>", "<eos>", "a", "a"}), InputError);
  CHECK_THROWS_AS(SummaryVocab({"<eos>", "<bos>"}), InputError);
}

TEST_CASE("summaries are label-determined and injective over leaves") {
  const ItemCatalog c = small_catalog();
  const SummaryVocab v = make_summary_vocab(c.tree);
  std::map<int, SummarySequence> by_leaf;
  for (const auto& item : c.items) {
    const SummarySequence s = summarize(item, c.tree, v);
    CHECK(s.tokens.size() == static_cast<std::size_t>(kSummaryLength));
    CHECK(s.tokens.back() == kEndToken);
    auto [it, inserted] = by_leaf.emplace(item.labels[2], s);
    if (!inserted) CHECK(it->second == s);
  }
  std::set<std::vector<int>> distinct;
  for (const auto& [leaf, s] : by_leaf) distinct.insert(s.tokens);
  CHECK(distinct.size() == static_cast<std::size_t>(c.tree.leaf_count()));
}

TEST_CASE("sibling leaves differ exactly at the content and trait-A positions") {
  const ItemCatalog c = small_catalog();
  const SummaryVocab v = make_summary_vocab(c.tree);
  Item a = c.items[0];
  Item b = c.items[0];
  a.labels = {0, 0, 0};
  b.labels = {0, 0, 1};
  const auto sa = summarize(a, c.tree, v);
  const auto sb = summarize(b, c.tree, v);
  std::vector<int> differ;
  for (int t = 0; t < kSummaryLength; ++t) {
    if (sa.tokens[static_cast<std::size_t>(t)] != sb.tokens[static_cast<std::size_t>(t)]) differ.push_back(t);
  }
  CHECK(differ == std::vector<int>{0, 4});
  CHECK(render_summary(sa, v).rfind("content:", 0) == 0);
}

TEST_CASE("recon_state is linear and honours the concat order") {
  const ItemCatalog c = small_catalog();
  const SummaryVocab v = make_summary_vocab(c.tree);
  ReconPipeline p = random_pipeline(v, 4);
  p.recon_head.layers[0].bias.setZero();
  CHECK(recon_state(Matrix::Zero(6, 1), Matrix::Zero(4, 1), p).h_rec.isZero());
  CHECK_THROWS_AS(recon_state(Matrix::Zero(5, 1), Matrix::Zero(4, 1), p), ShapeError);

  Rng rng(9);
  const Matrix logits = random_matrix(6, 1, rng);
  const Matrix emb = random_matrix(4, 1, rng);
  const Matrix h = recon_state(logits, emb, p).h_rec;
  Matrix in(10, 1);
  in << logits, emb;
  CHECK((h - p.recon_head.layers[0].weight * in).norm() < 1e-12);
  Matrix swapped(10, 1);
  swapped << emb, logits;
  CHECK((h - p.recon_head.layers[0].weight * swapped).norm() > 1e-6);
}

TEST_CASE("recon_state gradient of squared norm matches finite differences") {
  const ItemCatalog c = small_catalog();
  const SummaryVocab v = make_summary_vocab(c.tree);
  const ReconPipeline p = random_pipeline(v, 2);
  Rng rng(12);
  Matrix logits = random_matrix(6, 3, rng);
  Matrix emb = random_matrix(4, 3, rng);
  const ReconState st = recon_state(logits, emb, p);
  const ReconStateGrad g = recon_state_grad(p, st, 2.0 * st.h_rec);
  ParamList<double> params;
  append_params(logits, params);
  append_params(emb, params);
  ConstParamList<double> grads;
  append_params(g.logits, grads);
  append_params(g.embeddings, grads);
  const auto report = finite_diff_check([&] { return recon_state(logits, emb, p).h_rec.squaredNorm(); }, params,
                                        grads, 1e-4, 1e-4);
  CHECK(report.passed);
}

TEST_CASE("uniform decoder gives T_s ln V, rigged decoder gives zero loss") {
  const ItemCatalog c = small_catalog();
  const SummaryVocab v = make_summary_vocab(c.tree);
  ReconPipeline p = random_pipeline(v, 3);
  for (auto& layer : p.decoder.layers) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
  const SummarySequence target = summarize(c.items[5], c.tree, v);
  const std::vector<SummarySequence> targets{target};
  const Matrix h = Matrix::Ones(5, 1);
  CHECK(recon_loss(h, targets, p).loss == doctest::Approx(kSummaryLength * std::log(v.size())).epsilon(1e-12));

  // Rig: the decoder reads the prefix encoding; a large bias on the hidden
  // layer passes a constant, and the output layer maps position features to
  // the target token. Position t is identified by the prefix-length block.
  ReconPipeline rigged = p;
  const int V = v.size();
  auto& hidden = rigged.decoder.layers[0];
  auto& out = rigged.decoder.layers[1];
  hidden = DenseLayer<double>{Matrix::Zero(kSummaryLength, hidden.weight.cols()), Vector::Zero(kSummaryLength),
                              Activation::kRelu};
  out.weight = Matrix::Zero(V, kSummaryLength);
  const int r = rigged.recon_dim();
  // Hidden unit t fires when prefix slot t-1 is filled and slot t is empty.
  for (int t = 0; t < kSummaryLength; ++t) {
    hidden.bias(t) = 1.0;
    if (t > 0) hidden.weight.block(t, r + (t - 1) * V, 1, V).setConstant(1.0);
    for (int u = t; u < kSummaryLength; ++u) hidden.weight.block(t, r + u * V, 1, V).setConstant(-10.0);
    if (t > 0) hidden.bias(t) = 0.0;
    out.weight(target.tokens[static_cast<std::size_t>(t)], t) = 1e3;
  }
  CHECK(recon_loss(h, targets, rigged).loss < 1e-9);
  CHECK(decode_summary(h.col(0), rigged) == target);
}

TEST_CASE("recon_loss gradients match finite differences for decoder and conditioning") {
  const ItemCatalog c = small_catalog();
  const SummaryVocab v = make_summary_vocab(c.tree);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ReconPipeline p = random_pipeline(v, seed);
    Rng rng(seed + 100);
    Matrix h = random_matrix(5, 2, rng);
    const std::vector<SummarySequence> targets{summarize(c.items[1], c.tree, v), summarize(c.items[7], c.tree, v)};
    const ReconLoss loss = recon_loss(h, targets, p);
    ParamList<double> params;
    append_params(p.decoder, params);
    append_params(h, params);
    ConstParamList<double> grads;
    append_params(loss.decoder, grads);
    append_params(loss.grad_h, grads);
    const auto report = finite_diff_check(
        [&] {
          const ReconLoss l = recon_loss(h, targets, p);
          return FdProbe{l.loss, decoder_regime(p, h, targets)};
        },
        params, grads, 1e-4, 1e-4, 600, seed);
    CHECK(report.passed);
  }
}

TEST_CASE("recon_loss rejects out-of-vocabulary targets") {
  const ItemCatalog c = small_catalog();
  const SummaryVocab v = make_summary_vocab(c.tree);
  const ReconPipeline p = random_pipeline(v, 1);
  SummarySequence bad = summarize(c.items[0], c.tree, v);
  bad.tokens[2] = v.size();
  const std::vector<SummarySequence> targets{bad};
  CHECK_THROWS_AS(recon_loss(Matrix::Zero(5, 1), targets, p), InputError);
}

TEST_CASE("constant decoder repeats its top token until T_s") {
  const ItemCatalog c = small_catalog();
  const SummaryVocab v = make_summary_vocab(c.tree);
  ReconPipeline p = random_pipeline(v, 5);
  for (auto& layer : p.decoder.layers) layer.weight.setZero();
  p.decoder.layers[1].bias.setZero();
  p.decoder.layers[1].bias(7) = 1.0;
  const SummarySequence s = decode_summary(Vector::Zero(5), p);
  CHECK(s.tokens == std::vector<int>(kSummaryLength, 7));
}
