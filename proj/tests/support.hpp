#pragma once

#include "sidforge/numkit.hpp"
#include "sidforge/rng.hpp"

namespace sidforge::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  }
  return m;
}

inline Mlp<double> random_mlp(std::initializer_list<Eigen::Index> dims, std::initializer_list<Activation> acts,
                              Rng& rng) {
  auto mlp = make_mlp<double>(dims, acts);
  for (auto& layer : mlp.layers) {
    layer.weight = random_matrix(layer.weight.rows(), layer.weight.cols(), rng, 0.7);
    layer.bias = random_matrix(layer.bias.rows(), 1, rng, 0.3);
  }
  return mlp;
}

inline ParamList<double> params_of(Mlp<double>& mlp) {
  ParamList<double> out;
  append_params(mlp, out);
  return out;
}

inline ConstParamList<double> params_of(const Mlp<double>& mlp) {
  ConstParamList<double> out;
  append_params(mlp, out);
  return out;
}

}  // namespace sidforge::testing
