// SPDX-License-Identifier: Apache-2.0
// Shared fixtures for the test binaries.
#pragma once

#include "latcert/network.hpp"
#include "latcert/segprop.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace latcert::testing {

using Rng = std::mt19937_64;

inline Vector random_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  }
  return m;
}

/// Affine/relu stack with nonzero biases so that segments cross many
/// activation boundaries. widths = {input, hidden..., output}.
inline Network random_network(Rng& rng, const std::vector<std::size_t>& widths,
                              bool final_relu = false) {
  std::vector<Layer> layers;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const auto in = static_cast<Eigen::Index>(widths[k]);
    const auto out = static_cast<Eigen::Index>(widths[k + 1]);
    layers.push_back(Layer::affine(random_matrix(rng, out, in, 1.0 / std::sqrt(double(in))),
                                   random_vector(rng, out, 0.5)));
    if (k + 2 < widths.size() || final_relu) layers.push_back(Layer::relu());
  }
  return Network("random", widths.front(), std::move(layers));
}

/// Random depth in [1, max_depth] affine layers, widths in [1, max_width].
inline Network random_shaped_network(Rng& rng, std::size_t input, std::size_t output,
                                     std::size_t max_width, std::size_t max_depth) {
  std::uniform_int_distribution<std::size_t> depth(1, max_depth);
  std::uniform_int_distribution<std::size_t> width(1, max_width);
  std::vector<std::size_t> widths{input};
  const std::size_t d = depth(rng);
  for (std::size_t k = 1; k < d; ++k) widths.push_back(width(rng));
  widths.push_back(output);
  return random_network(rng, widths);
}

inline double relative_gap(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff() / (1.0 + b.cwiseAbs().maxCoeff());
}

}  // namespace latcert::testing
