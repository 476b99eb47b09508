#include "sidforge/summarizer.hpp"

#include <array>

namespace sidforge {
namespace {

constexpr std::array<const char*, kTraitCount> kTraits = {
    "minimalist", "exquisite",    "summer",  "elegant", "budget",  "premium",
    "family",     "outdoor",      "youthful", "professional", "festive", "eco-friendly",
    "compact",    "vintage",      "sporty",  "female-audience"};
constexpr std::array<const char*, 2> kIndustries = {"general-ecommerce", "local-services"};

std::string content_token(const CategoryTree& tree, int c3) { return "content:" + tree.names[2][static_cast<std::size_t>(c3)]; }
std::string category_token(const CategoryTree& tree, int c1) { return "category:" + tree.names[0][static_cast<std::size_t>(c1)]; }
std::string industry_token(int c1) { return std::string("industry:") + kIndustries[static_cast<std::size_t>(c1) % kIndustries.size()]; }
std::string trait_token(int t) { return std::string("trait:") + kTraits[static_cast<std::size_t>(t)]; }

// Siblings get distinct trait-A values while branching[2] <= 16.
int trait_a(const CategoryTree& tree, int c3) {
  const int c2 = tree.parent(2, c3);
  const int local = c3 % tree.branching[2];
  return static_cast<int>((mix64(static_cast<std::uint64_t>(c2) + 0x1000) + static_cast<std::uint64_t>(local)) % kTraitCount);
}

int trait_b(int c2) { return static_cast<int>(mix64(static_cast<std::uint64_t>(c2) + 0x2000) % kTraitCount); }

}  // namespace

SummaryVocab::SummaryVocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (int i = 0; i < size(); ++i) {
    if (!index_.emplace(tokens_[static_cast<std::size_t>(i)], i).second) {
      throw InputError("summarizer", "duplicate vocabulary token '" + tokens_[static_cast<std::size_t>(i)] + "'");
    }
  }
  if (size() < 2 || tokens_[kBeginToken] != "<bos>" || tokens_[kEndToken] != "<eos>") {
    throw InputError("summarizer", "vocabulary must reserve ids 0/1 for <bos>/<eos>");
  }
  if (size() > kMaxVocabSize) {
    throw ConfigError("summarizer", "vocabulary size " + std::to_string(size()) + " exceeds " +
                                        std::to_string(kMaxVocabSize));
  }
}

int SummaryVocab::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw InputError("summarizer", "token '" + token + "' not in vocabulary");
  return it->second;
}

const std::string& SummaryVocab::token(int id) const {
  if (id < 0 || id >= size()) throw InputError("summarizer", "token id " + std::to_string(id) + " out of vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

SummaryVocab make_summary_vocab(const CategoryTree& tree) {
  std::vector<std::string> tokens = {"<bos>", "<eos>", "highlighting", "for"};
  for (const char* industry : kIndustries) tokens.push_back(std::string("industry:") + industry);
  for (int c1 = 0; c1 < tree.node_count(0); ++c1) tokens.push_back(category_token(tree, c1));
  for (int c3 = 0; c3 < tree.leaf_count(); ++c3) tokens.push_back(content_token(tree, c3));
  for (int t = 0; t < kTraitCount; ++t) tokens.push_back(trait_token(t));
  return SummaryVocab(std::move(tokens));
}

SummarySequence summarize(const Item& item, const CategoryTree& tree, const SummaryVocab& vocab) {
  const auto [c1, c2, c3] = item.labels;
  if (c3 < 0 || c3 >= tree.leaf_count() || tree.parent(2, c3) != c2 || tree.parent(1, c2) != c1) {
    throw InputError("catalog", "item " + std::to_string(item.id) + " has labels outside the tree");
  }
  return SummarySequence{{vocab.id(content_token(tree, c3)), vocab.id(industry_token(c1)),
                          vocab.id(category_token(tree, c1)), vocab.id("highlighting"),
                          vocab.id(trait_token(trait_a(tree, c3))), vocab.id("for"),
                          vocab.id(trait_token(trait_b(c2))), kEndToken}};
}

SummarySequence summarize(const Item& item, const CategoryTree& tree) {
  return summarize(item, tree, make_summary_vocab(tree));
}

std::string render_summary(const SummarySequence& summary, const SummaryVocab& vocab) {
  std::string out;
  for (int t : summary.tokens) {
    if (!out.empty()) out += ' ';
    out += vocab.token(t);
  }
  return out;
}

ReconPipeline make_recon_pipeline(int sid_logit_dim, int embedding_dim, int recon_dim,
                                  int decoder_hidden, SummaryVocab vocab) {
  ReconPipeline p;
  const Eigen::Index v = vocab.size();
  p.vocab = std::move(vocab);
  p.recon_head = make_mlp<double>({sid_logit_dim + embedding_dim, recon_dim}, {Activation::kIdentity});
  p.decoder = make_mlp<double>({recon_dim + kSummaryLength * v, decoder_hidden, v},
                               {Activation::kRelu, Activation::kIdentity});
  return p;
}

void init_recon_pipeline(ReconPipeline& pipeline, Rng& rng) {
  init_uniform(pipeline.recon_head, rng);
  init_uniform(pipeline.decoder, rng);
}

ReconState recon_state(const Matrix& logits, const Matrix& embeddings, const ReconPipeline& pipeline) {
  if (logits.cols() != embeddings.cols() ||
      logits.rows() + embeddings.rows() != pipeline.recon_head.input_dim()) {
    throw ShapeError("summarizer", "recon_state: logits/embedding dims do not match the head");
  }
  Matrix z(logits.rows() + embeddings.rows(), logits.cols());
  z << logits, embeddings;
  auto fwd = mlp_apply(pipeline.recon_head, z);
  return ReconState{std::move(fwd.output), std::move(fwd.cache), logits.rows()};
}

ReconStateGrad recon_state_grad(const ReconPipeline& pipeline, const ReconState& state, const Matrix& grad_h) {
  auto back = mlp_grad(pipeline.recon_head, state.cache, grad_h);
  const Eigen::Index rest = back.input_grad.rows() - state.logit_rows;
  return ReconStateGrad{back.input_grad.topRows(state.logit_rows), back.input_grad.bottomRows(rest),
                        std::move(back.param_grads)};
}

Vector decoder_input(const Vector& h_rec, std::span<const int> prefix, int vocab_size) {
  Vector x = Vector::Zero(h_rec.size() + kSummaryLength * vocab_size);
  x.head(h_rec.size()) = h_rec;
  for (std::size_t u = 0; u < prefix.size(); ++u) {
    x(h_rec.size() + static_cast<Eigen::Index>(u) * vocab_size + prefix[u]) = 1.0;
  }
  return x;
}

ReconLoss recon_loss(const Matrix& h_rec, std::span<const SummarySequence> targets,
                     const ReconPipeline& pipeline) {
  const Eigen::Index n = h_rec.cols();
  const Eigen::Index d_r = h_rec.rows();
  const int v = pipeline.vocab_size();
  if (d_r != pipeline.recon_dim() || static_cast<Eigen::Index>(targets.size()) != n) {
    throw ShapeError("summarizer", "recon_loss: h_rec/targets do not match the pipeline");
  }
  for (const auto& target : targets) {
    if (target.tokens.size() != static_cast<std::size_t>(kSummaryLength)) {
      throw InputError("summarizer", "summary target must have length " + std::to_string(kSummaryLength));
    }
    for (int tok : target.tokens) {
      if (tok < 0 || tok >= v) throw InputError("summarizer", "target token " + std::to_string(tok) + " out of vocabulary");
    }
  }

  Matrix input = Matrix::Zero(d_r + kSummaryLength * v, n * kSummaryLength);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& tokens = targets[static_cast<std::size_t>(j)].tokens;
    for (int t = 0; t < kSummaryLength; ++t) {
      const Eigen::Index col = j * kSummaryLength + t;
      input.col(col).head(d_r) = h_rec.col(j);
      for (int u = 0; u < t; ++u) input(d_r + u * v + tokens[static_cast<std::size_t>(u)], col) = 1.0;
    }
  }
  auto fwd = mlp_apply(pipeline.decoder, input);

  ReconLoss out;
  out.per_item.assign(static_cast<std::size_t>(n), 0.0);
  Matrix grad_logits(v, n * kSummaryLength);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index col = 0; col < n * kSummaryLength; ++col) {
    const Eigen::Index j = col / kSummaryLength;
    const int t = static_cast<int>(col % kSummaryLength);
    const int target = targets[static_cast<std::size_t>(j)].tokens[static_cast<std::size_t>(t)];
    const auto logits = fwd.output.col(col);
    const double max = logits.maxCoeff();
    const Vector shifted_exp = (logits.array() - max).exp().matrix();
    const double sum = shifted_exp.sum();
    const double log_z = max + std::log(sum);
    out.per_item[static_cast<std::size_t>(j)] += log_z - logits(target);
    grad_logits.col(col) = shifted_exp / sum * inv_n;
    grad_logits(target, col) -= inv_n;
  }
  for (double l : out.per_item) out.loss += l * inv_n;

  auto back = mlp_grad(pipeline.decoder, fwd.cache, grad_logits);
  out.decoder = std::move(back.param_grads);
  out.grad_h = Matrix::Zero(d_r, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int t = 0; t < kSummaryLength; ++t) {
      out.grad_h.col(j) += back.input_grad.col(j * kSummaryLength + t).head(d_r);
    }
  }
  return out;
}

SummarySequence decode_summary(const Vector& h_rec, const ReconPipeline& pipeline) {
  if (h_rec.size() != pipeline.recon_dim()) throw ShapeError("summarizer", "decode_summary: h_rec dim mismatch");
  SummarySequence out;
  for (int t = 0; t < kSummaryLength; ++t) {
    const Matrix x = decoder_input(h_rec, out.tokens, pipeline.vocab_size());
    const auto fwd = mlp_apply(pipeline.decoder, x);
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < fwd.output.rows(); ++k) {
      if (fwd.output(k, 0) > fwd.output(best, 0)) best = k;
    }
    out.tokens.push_back(static_cast<int>(best));
    if (best == kEndToken) break;
  }
  return out;
}

}  // namespace sidforge
