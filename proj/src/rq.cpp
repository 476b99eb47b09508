#include "sidforge/rq.hpp"

#include <cstdio>
#include <ostream>

namespace sidforge {

Codebook rq_kmeans_fit(const Matrix& points, int levels, int codebook_size, std::uint64_t seed, int iterations) {
  if (levels <= 0) throw ConfigError("rq", "levels must be positive");
  Codebook cb{levels, codebook_size, static_cast<int>(points.rows()), {}};
  Matrix residual = points;
  for (int l = 0; l < levels; ++l) {
    KMeansResult<double> km;
    try {
      km = kmeans_fit(residual, codebook_size, iterations, derive_seed(seed, static_cast<std::uint64_t>(l)));
    } catch (const Error& e) {
      throw ConfigError("rq", "level " + std::to_string(l + 1) + ": " + e.what());
    }
    cb.codewords.push_back(km.centroids);
    for (Eigen::Index i = 0; i < residual.cols(); ++i) {
      // Residuals follow the same nearest-codeword rule rq_assign uses.
      Eigen::Index best = 0;
      double best_d = (residual.col(i) - km.centroids.col(0)).squaredNorm();
      for (Eigen::Index c = 1; c < km.centroids.cols(); ++c) {
        const double d = (residual.col(i) - km.centroids.col(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      residual.col(i) -= km.centroids.col(best);
    }
  }
  return cb;
}

RqAssignment rq_assign(const Codebook& codebook, const Vector& v) {
  if (v.size() != codebook.dim) {
    throw ShapeError("rq", "vector dim " + std::to_string(v.size()) + " != codeword dim " + std::to_string(codebook.dim));
  }
  RqAssignment out;
  Vector r = v;
  out.trace.norms.push_back(r.norm());
  for (int l = 0; l < codebook.levels; ++l) {
    const Matrix& c = codebook.codewords[static_cast<std::size_t>(l)];
    Eigen::Index best = 0;
    double best_d = (r - c.col(0)).squaredNorm();
    for (Eigen::Index k = 1; k < c.cols(); ++k) {
      const double d = (r - c.col(k)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    out.sid.tokens.push_back(static_cast<int>(best));
    r -= c.col(best);
    out.trace.norms.push_back(r.norm());
  }
  return out;
}

Vector rq_reconstruct(const Codebook& codebook, const SidSequence& sid) {
  Vector q = Vector::Zero(codebook.dim);
  for (int l = 0; l < codebook.levels; ++l) q += codebook.codewords[static_cast<std::size_t>(l)].col(sid[static_cast<std::size_t>(l)]);
  return q;
}

RqVaeModel make_rq_vae_model(int feature_dim, const RqVaeConfig& config) {
  if (config.latent_dim <= 0 || config.hidden_dim <= 0 || feature_dim <= 0) {
    throw ConfigError("rq", "RQ-VAE dims must be positive");
  }
  if (!(config.beta >= 0.0)) throw ConfigError("rq", "beta must be >= 0");
  RqVaeModel m;
  m.encoder = make_mlp<double>({feature_dim, config.hidden_dim, config.latent_dim},
                               {Activation::kRelu, Activation::kIdentity});
  m.decoder = make_mlp<double>({config.latent_dim, config.hidden_dim, feature_dim},
                               {Activation::kRelu, Activation::kIdentity});
  m.beta = config.beta;
  m.codebook = Codebook{config.levels, config.codebook_size, config.latent_dim, {}};
  for (int l = 0; l < config.levels; ++l) m.codebook.codewords.push_back(Matrix::Zero(config.latent_dim, config.codebook_size));
  return m;
}

Matrix rq_vae_encode(const RqVaeModel& model, const Matrix& features) {
  return mlp_apply(model.encoder, features).output;
}

FrozenQuantizer freeze_quantizer(const RqVaeModel& model, const Matrix& features) {
  const Matrix e = rq_vae_encode(model, features);
  FrozenQuantizer f{{}, Matrix(e.rows(), e.cols())};
  for (Eigen::Index j = 0; j < e.cols(); ++j) {
    RqAssignment a = rq_assign(model.codebook, e.col(j));
    f.delta.col(j) = rq_reconstruct(model.codebook, a.sid) - e.col(j);
    f.sids.push_back(std::move(a.sid));
  }
  return f;
}

RqVaeLoss rq_vae_loss(const RqVaeModel& model, const Matrix& features, const FrozenQuantizer& frozen, bool quantize) {
  const Eigen::Index n = features.cols();
  auto enc = mlp_apply(model.encoder, features);
  const Matrix& e = enc.output;
  Matrix dec_in = quantize ? Matrix(e + frozen.delta) : e;
  auto dec = mlp_apply(model.decoder, dec_in);

  RqVaeLoss out;
  const double inv_n = 1.0 / static_cast<double>(n);
  const Matrix diff = dec.output - features;
  out.recon = diff.squaredNorm() * inv_n;
  auto dec_back = mlp_grad(model.decoder, dec.cache, Matrix((2.0 * inv_n) * diff));
  Matrix grad_e = dec_back.input_grad;  // straight-through copy across the quantizer

  if (quantize) {
    // Commitment: sum_l ||r^l - c_{s^l}||^2 = sum_l ||r^{l+1}||^2 with
    // r^l = e - sum_{m<l} c_{s^m}; codewords are constants.
    Matrix residual = e;
    double commit = 0.0;
    for (int l = 0; l < model.codebook.levels; ++l) {
      const Matrix& c = model.codebook.codewords[static_cast<std::size_t>(l)];
      for (Eigen::Index j = 0; j < n; ++j) residual.col(j) -= c.col(frozen.sids[static_cast<std::size_t>(j)][static_cast<std::size_t>(l)]);
      commit += residual.squaredNorm();
      grad_e += (2.0 * model.beta * inv_n) * residual;
    }
    out.commit = model.beta * commit * inv_n;
  }
  out.total = out.recon + out.commit;
  auto enc_back = mlp_grad(model.encoder, enc.cache, grad_e);
  out.encoder_grad = std::move(enc_back.param_grads);
  out.decoder_grad = std::move(dec_back.param_grads);
  out.regime = mix64(relu_regime(model.encoder, enc.cache)) ^ relu_regime(model.decoder, dec.cache);
  return out;
}

RqVaeFit rq_vae_fit(const Matrix& features, const RqVaeConfig& config) {
  if (config.epochs < 0 || config.batch_size < 1) throw ConfigError("rq", "epochs >= 0 and batch_size >= 1 required");
  if (!(config.ema_decay >= 0.0 && config.ema_decay < 1.0)) throw ConfigError("rq", "ema_decay must lie in [0, 1)");
  if (!(config.learning_rate > 0.0)) throw ConfigError("rq", "learning_rate must be > 0");
  RqVaeFit fit{make_rq_vae_model(static_cast<int>(features.rows()), config), {}};
  RqVaeModel& model = fit.model;
  Rng rng(derive_seed(config.seed, 0x7a3));
  init_uniform(model.encoder, rng);
  init_uniform(model.decoder, rng);

  const Eigen::Index n = features.cols();
  const Eigen::Index latent = config.latent_dim;
  const int k = config.codebook_size;
  const double batch_share = std::min<double>(config.batch_size, static_cast<double>(n)) / static_cast<double>(n);

  // EMA statistics start from the k-means initialisation of the initial encodings.
  std::vector<Vector> cluster_size(static_cast<std::size_t>(config.levels), Vector::Zero(k));
  std::vector<Matrix> embed_sum(static_cast<std::size_t>(config.levels));
  if (config.quantize) {
    const Matrix e0 = rq_vae_encode(model, features);
    model.codebook = rq_kmeans_fit(e0, config.levels, k, derive_seed(config.seed, 0x7a4));
    Matrix residual = e0;
    for (int l = 0; l < config.levels; ++l) {
      const Matrix& c = model.codebook.codewords[static_cast<std::size_t>(l)];
      Vector& cs = cluster_size[static_cast<std::size_t>(l)];
      for (Eigen::Index j = 0; j < n; ++j) {
        const RqAssignment a = rq_assign(Codebook{1, k, static_cast<int>(latent), {c}}, residual.col(j));
        cs(a.sid[0]) += batch_share;
        residual.col(j) -= c.col(a.sid[0]);
      }
      embed_sum[static_cast<std::size_t>(l)] = c * cs.asDiagonal();
    }
  }

  ParamList<double> params;
  append_params(model.encoder, params);
  append_params(model.decoder, params);
  auto adam = make_adam<double>(params, config.learning_rate);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      Matrix x(features.rows(), static_cast<Eigen::Index>(stop - start));
      for (std::size_t j = start; j < stop; ++j) x.col(static_cast<Eigen::Index>(j - start)) = features.col(order[j]);

      FrozenQuantizer frozen;
      Matrix e;
      if (config.quantize) {
        e = rq_vae_encode(model, x);
        frozen = freeze_quantizer(model, x);
      } else {
        frozen.delta = Matrix::Zero(latent, x.cols());
      }
      RqVaeLoss loss = rq_vae_loss(model, x, frozen, config.quantize);
      if (!std::isfinite(loss.total)) {
        throw NumericError("rq", "non-finite RQ-VAE loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      }
      ConstParamList<double> grads;
      append_params(loss.encoder_grad, grads);
      append_params(loss.decoder_grad, grads);
      adam_step<double>(adam, params, grads);

      if (config.quantize) {
        Matrix residual = e;
        for (int l = 0; l < config.levels; ++l) {
          Matrix& c = model.codebook.codewords[static_cast<std::size_t>(l)];
          Vector counts = Vector::Zero(k);
          Matrix sums = Matrix::Zero(latent, k);
          for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const int tok = frozen.sids[static_cast<std::size_t>(j)][static_cast<std::size_t>(l)];
            counts(tok) += 1.0;
            sums.col(tok) += residual.col(j);
          }
          for (Eigen::Index j = 0; j < x.cols(); ++j) {
            residual.col(j) -= c.col(frozen.sids[static_cast<std::size_t>(j)][static_cast<std::size_t>(l)]);
          }
          Vector& cs = cluster_size[static_cast<std::size_t>(l)];
          Matrix& es = embed_sum[static_cast<std::size_t>(l)];
          cs = config.ema_decay * cs + (1.0 - config.ema_decay) * counts;
          es = config.ema_decay * es + (1.0 - config.ema_decay) * sums;
          for (int kk = 0; kk < k; ++kk) {
            if (cs(kk) > 1e-12) c.col(kk) = es.col(kk) / cs(kk);
          }
        }
      }
      fit.trace.push_back({step, loss.recon, loss.commit, loss.total});
      ++step;
    }
  }
  round_to_float(model.encoder);
  round_to_float(model.decoder);
  for (auto& c : model.codebook.codewords) c = c.cast<float>().cast<double>();
  return fit;
}

void write_rq_vae_csv(const std::vector<RqVaeRecord>& trace, std::ostream& out) {
  out << "step,recon,commit,total\n";
  char line[128];
  for (const auto& r : trace) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g\n", r.step, r.recon, r.commit, r.total);
    out << line;
  }
}

}  // namespace sidforge
