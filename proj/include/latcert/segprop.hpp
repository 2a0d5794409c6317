// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "latcert/network.hpp"

#include <json.hpp>

#include <cstddef>
#include <vector>

namespace latcert {

/// Latent segment from start to end; the parameter t runs over [0, 1].
struct Segment {
  Vector start;
  Vector end;

  Vector at(double t) const { return start + t * (end - start); }
};

/// Piece-wise affine image of a segment: breakpoints (t_i, v_i) with the map
/// affine on every [t_i, t_{i+1}].
class SegmentChain {
 public:
  SegmentChain() = default;
  /// Vertices are stored as columns.
  SegmentChain(std::vector<double> t, Matrix vertices);

  static SegmentChain from_segment(const Segment& seg);

  std::size_t dim() const { return static_cast<std::size_t>(vertices_.rows()); }
  std::size_t breakpoints() const { return t_.size(); }
  std::size_t pieces() const { return t_.empty() ? 0 : t_.size() - 1; }
  const std::vector<double>& t() const { return t_; }
  const Matrix& vertices() const { return vertices_; }
  auto vertex(std::size_t i) const { return vertices_.col(static_cast<Eigen::Index>(i)); }

  /// Index of the piece containing t (the last piece for t == 1).
  std::size_t piece_at(double t) const;
  /// Linear interpolation of the vertices at parameter t.
  Vector at(double t) const;

  /// Sum of Euclidean lengths of the pieces.
  double polyline_length() const;

 private:
  std::vector<double> t_;
  Matrix vertices_;
};

struct PropagationStats {
  /// Piece count after every layer, input segment first.
  std::vector<std::size_t> pieces_per_layer;
  double wall_ms = 0.0;
};

struct Propagation {
  SegmentChain chain;
  PropagationStats stats;
};

/// Crossing parameters closer than this collapse into one breakpoint.
inline constexpr double kBreakpointDedup = 1e-12;

SegmentChain propagate_affine(const SegmentChain& chain, const Matrix& weights, const Vector& bias);
SegmentChain propagate_relu(const SegmentChain& chain);
SegmentChain propagate_layer(const SegmentChain& chain, const Layer& layer);

/// Exact image of the segment under a piece-wise linear network.
Propagation propagate_segment(const Network& net, const Segment& seg);

struct Box {
  Vector lower;
  Vector upper;

  static Box point(const Vector& x) { return {x, x}; }
  static Box hull(const Segment& seg);
  bool contains(const Vector& x, double slack = 0.0) const;
};

/// Interval-arithmetic image of a box; sound but generally loose.
Box propagate_box(const Network& net, const Box& box);

nlohmann::json to_json(const SegmentChain& chain);
SegmentChain chain_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const PropagationStats& stats);

}  // namespace latcert
