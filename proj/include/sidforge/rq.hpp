#pragma once

// Two-stage residual-quantization baselines: RQ-KMeans over fixed embeddings
// and RQ-VAE with a jointly trained autoencoder and EMA codebooks.

#include <vector>

#include "sidforge/numkit.hpp"
#include "sidforge/sid_table.hpp"

namespace sidforge {

struct Codebook {
  int levels = 0;
  int codebook_size = 0;
  int dim = 0;
  std::vector<Matrix> codewords;  // per level: dim x K

  bool operator==(const Codebook&) const = default;
};

struct ResidualTrace {
  std::vector<double> norms;  // ||r^1|| .. ||r^{L+1}||
};

struct RqAssignment {
  SidSequence sid;
  ResidualTrace trace;
};

// Points are columns.
Codebook rq_kmeans_fit(const Matrix& points, int levels, int codebook_size, std::uint64_t seed,
                       int iterations = 25);

RqAssignment rq_assign(const Codebook& codebook, const Vector& v);

// Sum of the chosen codewords.
Vector rq_reconstruct(const Codebook& codebook, const SidSequence& sid);

struct RqVaeConfig {
  int levels = 3;
  int codebook_size = 16;
  int latent_dim = 32;
  int hidden_dim = 64;
  double beta = 0.25;
  double ema_decay = 0.99;
  int epochs = 30;
  int batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;
  bool quantize = true;  // false trains the plain autoencoder
};

struct RqVaeModel {
  Mlp<double> encoder;  // features -> hidden (relu) -> latent
  Mlp<double> decoder;  // latent -> hidden (relu) -> features
  Codebook codebook;
  double beta = 0.25;

  bool operator==(const RqVaeModel&) const = default;
};

struct RqVaeRecord {
  int step = 0;
  double recon = 0.0;
  double commit = 0.0;  // already weighted by beta
  double total = 0.0;
  bool operator==(const RqVaeRecord&) const = default;
};

struct RqVaeFit {
  RqVaeModel model;
  std::vector<RqVaeRecord> trace;
};

RqVaeModel make_rq_vae_model(int feature_dim, const RqVaeConfig& config);
RqVaeFit rq_vae_fit(const Matrix& features, const RqVaeConfig& config);

// Loss with the quantizer frozen: decoder input is e + delta with delta held
// constant (the straight-through surrogate) and residual targets use the
// given tokens. Evaluating it with delta = q - e and tokens = rq_assign(e)
// is exactly one training step's objective.
struct RqVaeLoss {
  double recon = 0.0;
  double commit = 0.0;
  double total = 0.0;
  Mlp<double> encoder_grad;
  Mlp<double> decoder_grad;
  std::uint64_t regime = 0;
};

struct FrozenQuantizer {
  std::vector<SidSequence> sids;
  Matrix delta;  // latent x n
};

FrozenQuantizer freeze_quantizer(const RqVaeModel& model, const Matrix& features);
RqVaeLoss rq_vae_loss(const RqVaeModel& model, const Matrix& features, const FrozenQuantizer& frozen,
                      bool quantize = true);

Matrix rq_vae_encode(const RqVaeModel& model, const Matrix& features);

void write_rq_vae_csv(const std::vector<RqVaeRecord>& trace, std::ostream& out);

}  // namespace sidforge
