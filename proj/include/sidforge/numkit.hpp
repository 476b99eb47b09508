#pragma once

// Dense numeric kernel shared by every learning module: feed-forward maps
// with exact backprop, an adaptive-moment optimizer, a central-difference
// gradient checker and k-means. Samples are stored column-wise throughout.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "sidforge/errors.hpp"
#include "sidforge/rng.hpp"

namespace sidforge {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1 };

template <typename Scalar>
struct DenseLayer {
  MatrixX<Scalar> weight;  // out x in
  VectorX<Scalar> bias;    // out
  Activation activation = Activation::kIdentity;

  Eigen::Index input_dim() const { return weight.cols(); }
  Eigen::Index output_dim() const { return weight.rows(); }
};

template <typename Scalar>
struct Mlp {
  std::vector<DenseLayer<Scalar>> layers;

  Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().input_dim(); }
  Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().output_dim(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.weight.size() + layer.bias.size();
    return n;
  }

  Mlp zeros_like() const {
    Mlp out = *this;
    for (auto& layer : out.layers) {
      layer.weight.setZero();
      layer.bias.setZero();
    }
    return out;
  }

  template <typename Other>
  Mlp<Other> cast() const {
    Mlp<Other> out;
    out.layers.reserve(layers.size());
    for (const auto& layer : layers) {
      out.layers.push_back({layer.weight.template cast<Other>(), layer.bias.template cast<Other>(),
                            layer.activation});
    }
    return out;
  }

  bool operator==(const Mlp& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& a = layers[i];
      const auto& b = other.layers[i];
      if (a.activation != b.activation || a.weight.rows() != b.weight.rows() ||
          a.weight.cols() != b.weight.cols() || a.weight != b.weight || a.bias != b.bias) {
        return false;
      }
    }
    return true;
  }
};

// dims = {in, h1, ..., out}; activations has dims.size() - 1 entries and the
// last one must be identity.
template <typename Scalar>
Mlp<Scalar> make_mlp(std::span<const Eigen::Index> dims, std::span<const Activation> activations) {
  if (dims.size() < 2 || activations.size() + 1 != dims.size()) {
    throw ShapeError("numkit", "make_mlp needs dims.size() == activations.size() + 1 >= 2");
  }
  if (activations.back() != Activation::kIdentity) {
    throw ConfigError("numkit", "final layer must use the identity activation");
  }
  Mlp<Scalar> mlp;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i] <= 0 || dims[i + 1] <= 0) throw ShapeError("numkit", "layer dims must be positive");
    mlp.layers.push_back({MatrixX<Scalar>::Zero(dims[i + 1], dims[i]),
                          VectorX<Scalar>::Zero(dims[i + 1]), activations[i]});
  }
  return mlp;
}

template <typename Scalar>
Mlp<Scalar> make_mlp(std::initializer_list<Eigen::Index> dims,
                     std::initializer_list<Activation> activations) {
  return make_mlp<Scalar>(std::span<const Eigen::Index>(dims.begin(), dims.size()),
                          std::span<const Activation>(activations.begin(), activations.size()));
}

// Every value is drawn uniform in +-1/sqrt(fan_in) and rounded through float,
// so a freshly initialised network survives a 32-bit checkpoint bit-exactly.
template <typename Scalar>
void init_uniform(Mlp<Scalar>& mlp, Rng& rng) {
  for (auto& layer : mlp.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.input_dim()));
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
        layer.weight(r, c) = static_cast<Scalar>(static_cast<float>(rng.uniform(-bound, bound)));
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      layer.bias(r) = static_cast<Scalar>(static_cast<float>(rng.uniform(-bound, bound)));
    }
  }
}

template <typename Scalar>
void round_to_float(Mlp<Scalar>& mlp) {
  for (auto& layer : mlp.layers) {
    layer.weight = layer.weight.template cast<float>().template cast<Scalar>();
    layer.bias = layer.bias.template cast<float>().template cast<Scalar>();
  }
}

template <typename Scalar>
std::uint64_t fingerprint(const Mlp<Scalar>& mlp) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const Scalar* data, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(Scalar); ++i) {
      h = (h ^ bytes[i]) * 0x100000001b3ULL;
    }
  };
  for (const auto& layer : mlp.layers) {
    feed(layer.weight.data(), layer.weight.size());
    feed(layer.bias.data(), layer.bias.size());
  }
  return h;
}

template <typename Scalar>
struct MlpCache {
  std::vector<MatrixX<Scalar>> inputs;   // input to each layer
  std::vector<MatrixX<Scalar>> preacts;  // pre-activation of each layer
  std::uint64_t params_fingerprint = 0;
};

template <typename Scalar>
struct MlpForward {
  MatrixX<Scalar> output;
  MlpCache<Scalar> cache;
};

template <typename Scalar>
struct MlpBackward {
  Mlp<Scalar> param_grads;
  MatrixX<Scalar> input_grad;
};

template <typename Scalar>
MlpForward<Scalar> mlp_apply(const Mlp<Scalar>& mlp, const std::type_identity_t<MatrixX<Scalar>>& x) {
  if (mlp.layers.empty()) throw ShapeError("numkit", "empty network");
  if (x.rows() != mlp.input_dim()) {
    throw ShapeError("numkit", "input dim " + std::to_string(x.rows()) + " != layer dim " +
                                   std::to_string(mlp.input_dim()));
  }
  MlpForward<Scalar> fwd;
  fwd.cache.inputs.reserve(mlp.layers.size());
  fwd.cache.preacts.reserve(mlp.layers.size());
  MatrixX<Scalar> current = x;
  for (const auto& layer : mlp.layers) {
    MatrixX<Scalar> pre = layer.weight * current;
    pre.colwise() += layer.bias;
    fwd.cache.inputs.push_back(std::move(current));
    current = layer.activation == Activation::kRelu ? MatrixX<Scalar>(pre.cwiseMax(Scalar(0))) : pre;
    fwd.cache.preacts.push_back(std::move(pre));
  }
  if (!current.allFinite()) throw NumericError("numkit", "non-finite network output");
  fwd.output = std::move(current);
  fwd.cache.params_fingerprint = fingerprint(mlp);
  return fwd;
}

template <typename Scalar>
MlpBackward<Scalar> mlp_grad(const Mlp<Scalar>& mlp, const MlpCache<Scalar>& cache,
                             const std::type_identity_t<MatrixX<Scalar>>& upstream) {
  if (cache.inputs.size() != mlp.layers.size() || cache.params_fingerprint != fingerprint(mlp)) {
    throw UsageError("numkit", "stale cache: parameters changed since mlp_apply");
  }
  const Eigen::Index n = cache.inputs.front().cols();
  if (upstream.rows() != mlp.output_dim() || upstream.cols() != n) {
    throw ShapeError("numkit", "upstream gradient shape does not match network output");
  }
  MlpBackward<Scalar> back{mlp.zeros_like(), {}};
  MatrixX<Scalar> grad = upstream;
  for (std::size_t k = mlp.layers.size(); k-- > 0;) {
    const auto& layer = mlp.layers[k];
    if (layer.activation == Activation::kRelu) {
      grad = (cache.preacts[k].array() > Scalar(0)).select(grad, Scalar(0));
    }
    back.param_grads.layers[k].weight.noalias() = grad * cache.inputs[k].transpose();
    back.param_grads.layers[k].bias = grad.rowwise().sum();
    MatrixX<Scalar> next = layer.weight.transpose() * grad;
    grad = std::move(next);
  }
  back.input_grad = std::move(grad);
  return back;
}

// Hash of the rectifier on/off pattern; finite differences that change it
// straddle a kink and are not comparable against the analytic gradient.
template <typename Scalar>
std::uint64_t relu_regime(const Mlp<Scalar>& mlp, const MlpCache<Scalar>& cache) {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
    if (mlp.layers[k].activation != Activation::kRelu) continue;
    const auto& pre = cache.preacts[k];
    for (Eigen::Index i = 0; i < pre.size(); ++i) {
      h = mix64(h ^ (static_cast<std::uint64_t>(pre.data()[i] > Scalar(0)) + 2 * static_cast<std::uint64_t>(i)));
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Flat parameter views.

template <typename Scalar>
using ParamList = std::vector<std::span<Scalar>>;
template <typename Scalar>
using ConstParamList = std::vector<std::span<const Scalar>>;

template <typename Scalar>
void append_params(Mlp<Scalar>& mlp, ParamList<Scalar>& out) {
  for (auto& layer : mlp.layers) {
    out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
}

template <typename Scalar>
void append_params(const Mlp<Scalar>& mlp, ConstParamList<Scalar>& out) {
  for (const auto& layer : mlp.layers) {
    out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
}

template <typename Scalar, int R, int C>
void append_params(Eigen::Matrix<Scalar, R, C>& m, ParamList<Scalar>& out) {
  out.emplace_back(m.data(), static_cast<std::size_t>(m.size()));
}

template <typename Scalar, int R, int C>
void append_params(const Eigen::Matrix<Scalar, R, C>& m, ConstParamList<Scalar>& out) {
  out.emplace_back(m.data(), static_cast<std::size_t>(m.size()));
}

// ---------------------------------------------------------------------------
// Adaptive-moment optimizer.

template <typename Scalar>
struct AdamState {
  Scalar learning_rate = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
  std::int64_t step = 0;
  std::vector<VectorX<Scalar>> first;
  std::vector<VectorX<Scalar>> second;
};

template <typename Scalar>
AdamState<Scalar> make_adam(std::span<const std::span<Scalar>> params, Scalar learning_rate) {
  AdamState<Scalar> state;
  state.learning_rate = learning_rate;
  for (const auto& p : params) {
    state.first.push_back(VectorX<Scalar>::Zero(static_cast<Eigen::Index>(p.size())));
    state.second.push_back(VectorX<Scalar>::Zero(static_cast<Eigen::Index>(p.size())));
  }
  return state;
}

template <typename Scalar>
void adam_step(AdamState<Scalar>& state, std::span<const std::span<Scalar>> params,
               std::span<const std::span<const Scalar>> grads) {
  if (params.size() != grads.size() || params.size() != state.first.size()) {
    throw ShapeError("numkit", "adam: parameter/gradient/state tensor counts differ");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size() ||
        static_cast<Eigen::Index>(params[t].size()) != state.first[t].size()) {
      throw ShapeError("numkit", "adam: shape mismatch at tensor " + std::to_string(t));
    }
    for (std::size_t i = 0; i < grads[t].size(); ++i) {
      if (!std::isfinite(static_cast<double>(grads[t][i]))) {
        throw NumericError("numkit", "non-finite gradient at tensor " + std::to_string(t) +
                                         " element " + std::to_string(i));
      }
    }
  }
  ++state.step;
  const Scalar correction1 = Scalar(1) - std::pow(state.beta1, static_cast<Scalar>(state.step));
  const Scalar correction2 = Scalar(1) - std::pow(state.beta2, static_cast<Scalar>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& m = state.first[t];
    auto& v = state.second[t];
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const Scalar g = grads[t][i];
      const auto ei = static_cast<Eigen::Index>(i);
      m(ei) = state.beta1 * m(ei) + (Scalar(1) - state.beta1) * g;
      v(ei) = state.beta2 * v(ei) + (Scalar(1) - state.beta2) * g * g;
      const Scalar m_hat = m(ei) / correction1;
      const Scalar v_hat = v(ei) / correction2;
      params[t][i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Central-difference gradient checking.

struct FdProbe {
  double loss = 0.0;
  std::uint64_t regime = 0;  // coordinates whose perturbation changes this are skipped
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // flat index over the concatenated parameters
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = false;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps coordinates
// whose true derivative is ~0 from dividing round-off by round-off.
inline constexpr double kFdRelativeFloor = 1e-6;

FiniteDiffReport finite_diff_check(const std::function<FdProbe()>& probe,
                                   std::span<const std::span<double>> params,
                                   std::span<const std::span<const double>> analytic, double h,
                                   double tolerance, std::size_t max_coords = 0,
                                   std::uint64_t seed = 0);

inline FiniteDiffReport finite_diff_check(const std::function<double()>& loss,
                                          std::span<const std::span<double>> params,
                                          std::span<const std::span<const double>> analytic,
                                          double h, double tolerance, std::size_t max_coords = 0,
                                          std::uint64_t seed = 0) {
  return finite_diff_check([&loss] { return FdProbe{loss(), 0}; }, params, analytic, h, tolerance,
                           max_coords, seed);
}

// ---------------------------------------------------------------------------
// k-means: k-means++ seeding, Lloyd iterations, then single-point (Hartigan)
// moves until none improves. Points are columns.

template <typename Scalar>
struct KMeansResult {
  MatrixX<Scalar> centroids;     // d x K
  std::vector<int> assignments;  // per point
  std::vector<Scalar> objective_history;
  Scalar objective = Scalar(0);

  Eigen::Index k() const { return centroids.cols(); }
};

namespace detail {

template <typename Scalar>
Scalar squared_distance(const MatrixX<Scalar>& a, Eigen::Index ia, const MatrixX<Scalar>& b,
                        Eigen::Index ib) {
  return (a.col(ia) - b.col(ib)).squaredNorm();
}

template <typename Scalar>
Scalar assign_nearest(const MatrixX<Scalar>& points, const MatrixX<Scalar>& centroids,
                      std::vector<int>& assignments, std::vector<Scalar>& distances) {
  const Eigen::Index n = points.cols();
  Scalar total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    Scalar best_d = squared_distance(points, i, centroids, 0);
    for (Eigen::Index c = 1; c < centroids.cols(); ++c) {
      const Scalar d = squared_distance(points, i, centroids, c);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    assignments[static_cast<std::size_t>(i)] = best;
    distances[static_cast<std::size_t>(i)] = best_d;
    total += best_d;
  }
  return total;
}

// rep[i] = lowest index j with column j identical to column i.
template <typename Scalar>
std::vector<Eigen::Index> duplicate_representatives(const MatrixX<Scalar>& points) {
  const Eigen::Index n = points.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index r = 0; r < points.rows(); ++r) {
      if (points(r, a) != points(r, b)) return points(r, a) < points(r, b);
    }
    return a < b;
  };
  std::sort(order.begin(), order.end(), less);
  std::vector<Eigen::Index> rep(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const bool same = i > 0 && points.col(order[i]) == points.col(order[i - 1]);
    rep[static_cast<std::size_t>(order[i])] = same ? rep[static_cast<std::size_t>(order[i - 1])] : order[i];
  }
  return rep;
}

}  // namespace detail

template <typename Scalar>
KMeansResult<Scalar> kmeans_fit(const MatrixX<Scalar>& points, int k, int iterations,
                                std::uint64_t seed) {
  const Eigen::Index n = points.cols();
  const Eigen::Index d = points.rows();
  if (k < 1) throw ConfigError("numkit", "kmeans: K must be positive");
  if (k > n) {
    throw ConfigError("numkit", "kmeans: K=" + std::to_string(k) + " exceeds point count " +
                                    std::to_string(n));
  }
  if (iterations < 0) throw ConfigError("numkit", "kmeans: iterations must be >= 0");
  if (!points.allFinite()) throw NumericError("numkit", "kmeans: non-finite input point");

  Rng rng(seed);
  KMeansResult<Scalar> result;
  result.centroids = MatrixX<Scalar>::Zero(d, k);
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  std::vector<Scalar> nearest(static_cast<std::size_t>(n), std::numeric_limits<Scalar>::max());

  // k-means++ seeding.
  Eigen::Index first = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
  for (int c = 0; c < k; ++c) {
    Eigen::Index pick = first;
    if (c > 0) {
      Scalar total = 0;
      for (auto v : nearest) total += v;
      const double u = rng.uniform();
      pick = -1;
      if (total > Scalar(0)) {
        const Scalar target = static_cast<Scalar>(u) * total;
        Scalar cum = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const Scalar w = nearest[static_cast<std::size_t>(i)];
          if (w <= Scalar(0)) continue;
          cum += w;
          if (cum > target) {
            pick = i;
            break;
          }
        }
        if (pick < 0) {  // round-off at the tail: last positive-weight point
          for (Eigen::Index i = n; i-- > 0;) {
            if (nearest[static_cast<std::size_t>(i)] > Scalar(0)) {
              pick = i;
              break;
            }
          }
        }
      } else {
        for (Eigen::Index i = 0; i < n; ++i) {
          if (!chosen[static_cast<std::size_t>(i)]) {
            pick = i;
            break;
          }
        }
      }
    }
    chosen[static_cast<std::size_t>(pick)] = true;
    result.centroids.col(c) = points.col(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar dist = detail::squared_distance(points, i, result.centroids, c);
      if (dist < nearest[static_cast<std::size_t>(i)]) nearest[static_cast<std::size_t>(i)] = dist;
    }
  }

  const std::vector<Eigen::Index> rep = detail::duplicate_representatives(points);
  result.assignments.assign(static_cast<std::size_t>(n), 0);
  std::vector<Scalar> dist(static_cast<std::size_t>(n), Scalar(0));
  std::vector<int> previous;
  for (int it = 0;; ++it) {
    const Scalar objective = detail::assign_nearest(points, result.centroids, result.assignments, dist);
    result.objective_history.push_back(objective);
    if (it == iterations || (it > 0 && previous == result.assignments)) break;
    previous = result.assignments;

    MatrixX<Scalar> sums = MatrixX<Scalar>::Zero(d, k);
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = result.assignments[static_cast<std::size_t>(i)];
      sums.col(c) += points.col(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    std::vector<bool> reseeded(static_cast<std::size_t>(n), false);
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        result.centroids.col(c) = sums.col(c) / static_cast<Scalar>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (reseeded[static_cast<std::size_t>(i)]) continue;
        if (far < 0 || dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]) far = i;
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        if (rep[static_cast<std::size_t>(i)] == rep[static_cast<std::size_t>(far)]) reseeded[static_cast<std::size_t>(i)] = true;
      }
      result.centroids.col(c) = points.col(far);
    }
  }

  // Single-point refinement: move the points equal to x (multiplicity w)
  // from cluster a to b when w|b|/(|b|+w) d(x,b) < w|a|/(|a|-w) d(x,a). Each
  // move strictly lowers the objective, which escapes Lloyd fixed points such
  // as the 3-vs-1 split of a square's corners. Moving identical points
  // together keeps the result invariant to duplicating the data.
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
  for (int a : result.assignments) ++counts[static_cast<std::size_t>(a)];
  std::vector<Eigen::Index> group_size(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) ++group_size[static_cast<std::size_t>(rep[static_cast<std::size_t>(i)])];
  bool moved = true;
  bool refined = false;
  for (int pass = 0; moved && pass < std::max(iterations, 1); ++pass) {
    moved = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (rep[static_cast<std::size_t>(i)] != i) continue;
      const Eigen::Index w = group_size[static_cast<std::size_t>(i)];
      const int a = result.assignments[static_cast<std::size_t>(i)];
      const Eigen::Index na = counts[static_cast<std::size_t>(a)];
      if (na <= w) continue;
      const auto sw = static_cast<Scalar>(w);
      const Scalar removal = sw * static_cast<Scalar>(na) / static_cast<Scalar>(na - w) *
                             detail::squared_distance(points, i, result.centroids, a);
      int best = a;
      Scalar best_gain = Scalar(0);
      for (int b = 0; b < k; ++b) {
        if (b == a) continue;
        const Eigen::Index nb = counts[static_cast<std::size_t>(b)];
        const Scalar addition = sw * static_cast<Scalar>(nb) / static_cast<Scalar>(nb + w) *
                                detail::squared_distance(points, i, result.centroids, b);
        const Scalar gain = removal - addition;
        if (gain > best_gain + Scalar(1e-12) * (removal + addition)) {
          best_gain = gain;
          best = b;
        }
      }
      if (best == a) continue;
      const auto nb = static_cast<Scalar>(counts[static_cast<std::size_t>(best)]);
      result.centroids.col(a) =
          (result.centroids.col(a) * static_cast<Scalar>(na) - sw * points.col(i)) / static_cast<Scalar>(na - w);
      result.centroids.col(best) = (result.centroids.col(best) * nb + sw * points.col(i)) / (nb + sw);
      counts[static_cast<std::size_t>(a)] -= w;
      counts[static_cast<std::size_t>(best)] += w;
      for (Eigen::Index j = i; j < n; ++j) {
        if (rep[static_cast<std::size_t>(j)] == i) result.assignments[static_cast<std::size_t>(j)] = best;
      }
      moved = true;
    }
    if (moved) {
      // Recompute exact means to shed accumulated round-off from incremental updates.
      MatrixX<Scalar> sums = MatrixX<Scalar>::Zero(d, k);
      for (Eigen::Index i = 0; i < n; ++i) sums.col(result.assignments[static_cast<std::size_t>(i)]) += points.col(i);
      for (int c = 0; c < k; ++c) result.centroids.col(c) = sums.col(c) / static_cast<Scalar>(counts[static_cast<std::size_t>(c)]);
      Scalar objective = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        objective += detail::squared_distance(points, i, result.centroids, result.assignments[static_cast<std::size_t>(i)]);
      }
      result.objective_history.push_back(objective);
      refined = true;
    }
  }
  if (refined) {
    // Hand the caller nearest-centroid assignments; this can only lower the objective.
    result.objective_history.push_back(
        detail::assign_nearest(points, result.centroids, result.assignments, dist));
  }
  result.objective = result.objective_history.back();
  return result;
}

}  // namespace sidforge
