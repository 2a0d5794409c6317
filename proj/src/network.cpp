// SPDX-License-Identifier: Apache-2.0
#include "latcert/network.hpp"

#include "latcert/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>

namespace latcert {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::affine:
      return "affine";
    case LayerKind::relu:
      return "relu";
    case LayerKind::clamp01:
      return "clamp01";
    case LayerKind::clamp11:
      return "clamp11";
  }
  return "?";
}

Layer Layer::affine(Matrix weights, Vector bias) {
  if (weights.rows() != bias.size()) {
    throw ShapeError("affine layer: weight rows " + std::to_string(weights.rows()) +
                     " != bias length " + std::to_string(bias.size()));
  }
  return Layer{LayerKind::affine, std::move(weights), std::move(bias)};
}

Network::Network(std::string name, std::size_t input_dim, std::vector<Layer> layers)
    : name_(std::move(name)), input_dim_(input_dim), layers_(std::move(layers)) {
  if (input_dim_ == 0) throw ShapeError("network '" + name_ + "': input_dim must be positive");
  dims_.reserve(layers_.size() + 1);
  dims_.push_back(input_dim_);
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Layer& layer = layers_[k];
    std::size_t in = dims_.back();
    if (layer.kind == LayerKind::affine) {
      if (static_cast<std::size_t>(layer.weights.cols()) != in) {
        throw ShapeError("network '" + name_ + "': layer " + std::to_string(k) + " expects " +
                         std::to_string(layer.weights.cols()) + " inputs, got " +
                         std::to_string(in));
      }
      if (layer.weights.rows() != layer.bias.size() || layer.weights.rows() == 0) {
        throw ShapeError("network '" + name_ + "': layer " + std::to_string(k) +
                         " has inconsistent weights/bias");
      }
      dims_.push_back(static_cast<std::size_t>(layer.weights.rows()));
    } else {
      if (layer.weights.size() != 0 || layer.bias.size() != 0) {
        throw ShapeError("network '" + name_ + "': " + to_string(layer.kind) + " layer " +
                         std::to_string(k) + " carries parameters");
      }
      dims_.push_back(in);
    }
  }
}

double relu(double x) { return x > 0.0 ? x : 0.0; }
double clamp01(double x) { return relu(-relu(x) + 1.0); }
double clamp11(double x) { return relu(-relu(x) + 2.0) - 1.0; }

void apply_activation(LayerKind kind, Eigen::Ref<Matrix> values) {
  switch (kind) {
    case LayerKind::relu:
      values = values.cwiseMax(0.0);
      break;
    case LayerKind::clamp01:
      values = values.unaryExpr([](double v) { return clamp01(v); });
      break;
    case LayerKind::clamp11:
      values = values.unaryExpr([](double v) { return clamp11(v); });
      break;
    case LayerKind::affine:
      throw DomainError("apply_activation called on an affine layer");
  }
}

Matrix forward_batch(const Network& net, const Matrix& inputs) {
  if (static_cast<std::size_t>(inputs.rows()) != net.input_dim()) {
    throw ShapeError("forward: input has " + std::to_string(inputs.rows()) +
                     " rows, network expects " + std::to_string(net.input_dim()));
  }
  if (!inputs.allFinite()) throw DomainError("forward: non-finite input");
  Matrix values = inputs;
  for (const Layer& layer : net.layers()) {
    if (layer.kind == LayerKind::affine) {
      Matrix next = layer.weights * values;
      next.colwise() += layer.bias;
      values = std::move(next);
    } else {
      apply_activation(layer.kind, values);
    }
  }
  return values;
}

Vector forward(const Network& net, const Vector& x) { return forward_batch(net, x); }

namespace {

// Slope of an activation at pre-activation v. Kinks resolve to slope 0.
double activation_slope(LayerKind kind, double v, bool& tie) {
  auto near = [&](double at) {
    if (std::abs(v - at) <= kTieTolerance) {
      tie = true;
      return true;
    }
    return false;
  };
  switch (kind) {
    case LayerKind::relu:
      if (near(0.0)) return 0.0;
      return v > 0.0 ? 1.0 : 0.0;
    case LayerKind::clamp01:
      if (near(0.0) || near(1.0)) return 0.0;
      return (v > 0.0 && v < 1.0) ? -1.0 : 0.0;
    case LayerKind::clamp11:
      if (near(0.0) || near(2.0)) return 0.0;
      return (v > 0.0 && v < 2.0) ? -1.0 : 0.0;
    case LayerKind::affine:
      break;
  }
  return 0.0;
}

template <typename Sink>
bool walk_jacobian(const Network& net, const Vector& z, Sink&& sink) {
  if (static_cast<std::size_t>(z.size()) != net.input_dim()) {
    throw ShapeError("jacobian: point has dimension " + std::to_string(z.size()) +
                     ", network expects " + std::to_string(net.input_dim()));
  }
  if (!z.allFinite()) throw DomainError("jacobian: non-finite point");
  bool tie = false;
  Vector value = z;
  Matrix jac = Matrix::Identity(z.size(), z.size());
  for (const Layer& layer : net.layers()) {
    if (layer.kind == LayerKind::affine) {
      value = layer.weights * value + layer.bias;
      jac = layer.weights * jac;
    } else {
      for (Eigen::Index i = 0; i < value.size(); ++i) {
        jac.row(i) *= activation_slope(layer.kind, value[i], tie);
      }
      apply_activation(layer.kind, value);
    }
    sink(jac);
  }
  return tie;
}

}  // namespace

JacobianResult jacobian(const Network& net, const Vector& z) {
  JacobianResult out;
  out.matrix = Matrix::Identity(z.size(), z.size());
  out.on_boundary = walk_jacobian(net, z, [&](const Matrix& j) { out.matrix = j; });
  return out;
}

LayerJacobians layer_jacobians(const Network& net, const Vector& z) {
  LayerJacobians out;
  out.on_boundary = walk_jacobian(net, z, [&](const Matrix& j) { out.prefixes.push_back(j); });
  return out;
}

Network compose(const Network& g, const Network& f) {
  if (g.output_dim() != f.input_dim()) {
    throw ShapeError("compose: '" + g.name() + "' outputs " + std::to_string(g.output_dim()) +
                     " values but '" + f.name() + "' expects " + std::to_string(f.input_dim()));
  }
  std::vector<Layer> layers = g.layers();
  layers.insert(layers.end(), f.layers().begin(), f.layers().end());
  return Network(f.name() + " o " + g.name(), g.input_dim(), std::move(layers));
}

std::size_t numeric_rank(const Matrix& m) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector& s = svd.singularValues();
  if (s.size() == 0 || s[0] <= 0.0) return 0;
  const double cutoff =
      static_cast<double>(std::max(m.rows(), m.cols())) * s[0] * 1e-10;
  return static_cast<std::size_t>((s.array() > cutoff).count());
}

Network identity_network(std::size_t dim, std::string name) {
  return Network(std::move(name), dim,
                 {Layer::affine(Matrix::Identity(dim, dim), Vector::Zero(dim))});
}

Network make_mlp(std::string name, const std::vector<std::size_t>& widths, std::uint64_t seed,
                 std::optional<LayerKind> output_activation, double output_bias) {
  if (widths.size() < 2) throw ShapeError("make_mlp: need at least input and output widths");
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const auto in = static_cast<Eigen::Index>(widths[k]);
    const auto out = static_cast<Eigen::Index>(widths[k + 1]);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in)));
    Matrix w(out, in);
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) w(r, c) = normal(rng);
    }
    const bool last = k + 2 == widths.size();
    layers.push_back(Layer::affine(std::move(w), Vector::Constant(out, last ? output_bias : 0.0)));
    if (!last) {
      layers.push_back(Layer::relu());
    } else if (output_activation && *output_activation != LayerKind::affine) {
      layers.push_back(Layer{*output_activation, {}, {}});
    }
  }
  return Network(std::move(name), widths.front(), std::move(layers));
}

}  // namespace latcert
