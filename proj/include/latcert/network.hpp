// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace latcert {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class LayerKind { affine, relu, clamp01, clamp11 };

const char* to_string(LayerKind kind);

/// One layer of a piece-wise linear network. Only affine layers carry
/// parameters; relu and the clamps act coordinate-wise.
///
/// clamp01(x) = relu(1 - relu(x)) and clamp11(x) = relu(2 - relu(x)) - 1.
/// Both reverse orientation on their linear range; a trained generator
/// absorbs the sign.
struct Layer {
  LayerKind kind = LayerKind::relu;
  Matrix weights;  // output-dim x input-dim
  Vector bias;

  static Layer affine(Matrix weights, Vector bias);
  static Layer relu() { return Layer{LayerKind::relu, {}, {}}; }
  static Layer clamp01() { return Layer{LayerKind::clamp01, {}, {}}; }
  static Layer clamp11() { return Layer{LayerKind::clamp11, {}, {}}; }
};

/// Immutable feed-forward composition of affine, relu and clamp layers.
class Network {
 public:
  Network(std::string name, std::size_t input_dim, std::vector<Layer> layers);

  const std::string& name() const { return name_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return dims_.back(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t size() const { return layers_.size(); }

  /// Dimension of the vector entering layer k (k == size() gives the output).
  std::size_t dim_before(std::size_t k) const { return dims_[k]; }

 private:
  std::string name_;
  std::size_t input_dim_;
  std::vector<Layer> layers_;
  std::vector<std::size_t> dims_;
};

/// Pre-activations whose magnitude is at most this are treated as ties.
inline constexpr double kTieTolerance = 1e-12;

double relu(double x);
double clamp01(double x);
double clamp11(double x);

/// Applies a single parameter-free layer in place.
void apply_activation(LayerKind kind, Eigen::Ref<Matrix> values);

Vector forward(const Network& net, const Vector& x);

/// Column-wise evaluation of many inputs at once.
Matrix forward_batch(const Network& net, const Matrix& inputs);

struct JacobianResult {
  Matrix matrix;
  /// Set when some relu/clamp pre-activation sat on a kink; the inactive
  /// branch (slope 0) was used there.
  bool on_boundary = false;
};

JacobianResult jacobian(const Network& net, const Vector& z);

struct LayerJacobians {
  /// Element k is the Jacobian of the prefix ending after layer k.
  std::vector<Matrix> prefixes;
  bool on_boundary = false;
};

LayerJacobians layer_jacobians(const Network& net, const Vector& z);

/// Runs g then f.
Network compose(const Network& g, const Network& f);

/// Number of singular values above max(rows, cols) * sigma_max * 1e-10.
std::size_t numeric_rank(const Matrix& m);

Network identity_network(std::size_t dim, std::string name = "identity");

/// Fully connected relu network with He-normal weights and zero biases.
/// widths = {input, hidden..., output}; the output layer is followed by
/// `output_activation` when it is relu or a clamp.
Network make_mlp(std::string name, const std::vector<std::size_t>& widths, std::uint64_t seed,
                 std::optional<LayerKind> output_activation = std::nullopt,
                 double output_bias = 0.0);

}  // namespace latcert
