// SPDX-License-Identifier: Apache-2.0
#include "latcert/segprop.hpp"

#include "latcert/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace latcert {

using nlohmann::json;

SegmentChain::SegmentChain(std::vector<double> t, Matrix vertices)
    : t_(std::move(t)), vertices_(std::move(vertices)) {
  if (t_.size() < 2 || static_cast<std::size_t>(vertices_.cols()) != t_.size()) {
    throw ShapeError("segment chain needs at least two breakpoints and one vertex per breakpoint");
  }
  if (t_.front() != 0.0 || t_.back() != 1.0) {
    throw DomainError("segment chain parameters must start at 0 and end at 1");
  }
  for (std::size_t i = 1; i < t_.size(); ++i) {
    if (!(t_[i] > t_[i - 1])) throw DomainError("segment chain parameters must increase strictly");
  }
}

SegmentChain SegmentChain::from_segment(const Segment& seg) {
  if (seg.start.size() != seg.end.size()) throw ShapeError("segment endpoints differ in dimension");
  if (!seg.start.allFinite() || !seg.end.allFinite()) throw DomainError("segment is not finite");
  Matrix v(seg.start.size(), 2);
  v.col(0) = seg.start;
  v.col(1) = seg.end;
  return SegmentChain({0.0, 1.0}, std::move(v));
}

std::size_t SegmentChain::piece_at(double t) const {
  auto it = std::upper_bound(t_.begin(), t_.end(), t);
  std::size_t idx = static_cast<std::size_t>(std::distance(t_.begin(), it));
  if (idx == 0) return 0;
  return std::min(idx - 1, pieces() - 1);
}

Vector SegmentChain::at(double t) const {
  const std::size_t i = piece_at(t);
  const double t0 = t_[i];
  const double t1 = t_[i + 1];
  const double lambda = (t - t0) / (t1 - t0);
  return vertices_.col(static_cast<Eigen::Index>(i)) +
         lambda * (vertices_.col(static_cast<Eigen::Index>(i + 1)) -
                   vertices_.col(static_cast<Eigen::Index>(i)));
}

double SegmentChain::polyline_length() const {
  double length = 0.0;
  for (Eigen::Index i = 0; i + 1 < vertices_.cols(); ++i) {
    length += (vertices_.col(i + 1) - vertices_.col(i)).norm();
  }
  return length;
}

SegmentChain propagate_affine(const SegmentChain& chain, const Matrix& weights, const Vector& bias) {
  if (static_cast<std::size_t>(weights.cols()) != chain.dim() || weights.rows() != bias.size()) {
    throw ShapeError("propagate_affine: weights are " + std::to_string(weights.rows()) + "x" +
                     std::to_string(weights.cols()) + " but the chain has dimension " +
                     std::to_string(chain.dim()));
  }
  Matrix mapped = weights * chain.vertices();
  mapped.colwise() += bias;
  return SegmentChain(chain.t(), std::move(mapped));
}

namespace {

// Splits every piece wherever a coordinate changes sign strictly inside it.
// The result interpolates the same affine pieces, only with extra vertices.
SegmentChain split_at_zero_crossings(const SegmentChain& chain) {
  const auto& t = chain.t();
  const Matrix& v = chain.vertices();
  const Eigen::Index dim = v.rows();

  std::vector<double> out_t;
  std::vector<Eigen::Index> src;       // piece index of each output vertex
  std::vector<double> out_lambda;      // position inside that piece
  out_t.reserve(t.size());

  std::vector<double> lambdas;
  for (std::size_t p = 0; p + 1 < t.size(); ++p) {
    const auto a = v.col(static_cast<Eigen::Index>(p));
    const auto b = v.col(static_cast<Eigen::Index>(p + 1));
    const double t0 = t[p];
    const double t1 = t[p + 1];
    out_t.push_back(t0);
    src.push_back(static_cast<Eigen::Index>(p));
    out_lambda.push_back(0.0);

    lambdas.clear();
    for (Eigen::Index j = 0; j < dim; ++j) {
      const double aj = a[j];
      const double bj = b[j];
      if ((aj < 0.0 && bj > 0.0) || (aj > 0.0 && bj < 0.0)) {
        lambdas.push_back(-aj / (bj - aj));
      }
    }
    std::sort(lambdas.begin(), lambdas.end());
    double last_t = t0;
    for (double lambda : lambdas) {
      const double tc = t0 + lambda * (t1 - t0);
      if (tc - last_t <= kBreakpointDedup || t1 - tc <= kBreakpointDedup) continue;
      out_t.push_back(tc);
      src.push_back(static_cast<Eigen::Index>(p));
      out_lambda.push_back(lambda);
      last_t = tc;
    }
  }
  out_t.push_back(t.back());
  src.push_back(static_cast<Eigen::Index>(t.size() - 1));
  out_lambda.push_back(0.0);

  Matrix out(dim, static_cast<Eigen::Index>(out_t.size()));
  for (std::size_t k = 0; k < out_t.size(); ++k) {
    const Eigen::Index p = src[k];
    const double lambda = out_lambda[k];
    if (lambda == 0.0) {
      out.col(static_cast<Eigen::Index>(k)) = v.col(p);
    } else {
      out.col(static_cast<Eigen::Index>(k)) = v.col(p) + lambda * (v.col(p + 1) - v.col(p));
    }
  }
  return SegmentChain(std::move(out_t), std::move(out));
}

SegmentChain map_vertices(SegmentChain chain, double scale, double offset) {
  Matrix v = (scale * chain.vertices()).array() + offset;
  return SegmentChain(chain.t(), std::move(v));
}

}  // namespace

SegmentChain propagate_relu(const SegmentChain& chain) {
  SegmentChain split = split_at_zero_crossings(chain);
  Matrix v = split.vertices().cwiseMax(0.0);
  return SegmentChain(split.t(), std::move(v));
}

SegmentChain propagate_layer(const SegmentChain& chain, const Layer& layer) {
  switch (layer.kind) {
    case LayerKind::affine:
      return propagate_affine(chain, layer.weights, layer.bias);
    case LayerKind::relu:
      return propagate_relu(chain);
    case LayerKind::clamp01:
      return propagate_relu(map_vertices(propagate_relu(chain), -1.0, 1.0));
    case LayerKind::clamp11:
      return map_vertices(propagate_relu(map_vertices(propagate_relu(chain), -1.0, 2.0)), 1.0,
                          -1.0);
  }
  throw DomainError("propagate_layer: unknown layer kind");
}

Propagation propagate_segment(const Network& net, const Segment& seg) {
  if (static_cast<std::size_t>(seg.start.size()) != net.input_dim()) {
    throw ShapeError("propagate_segment: segment has dimension " +
                     std::to_string(seg.start.size()) + ", network expects " +
                     std::to_string(net.input_dim()));
  }
  const auto begin = std::chrono::steady_clock::now();
  Propagation out;
  out.chain = SegmentChain::from_segment(seg);
  out.stats.pieces_per_layer.push_back(out.chain.pieces());
  for (const Layer& layer : net.layers()) {
    out.chain = propagate_layer(out.chain, layer);
    out.stats.pieces_per_layer.push_back(out.chain.pieces());
  }
  out.stats.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - begin).count();
  return out;
}

Box Box::hull(const Segment& seg) {
  return {seg.start.cwiseMin(seg.end), seg.start.cwiseMax(seg.end)};
}

bool Box::contains(const Vector& x, double slack) const {
  return x.size() == lower.size() && ((x - lower).array() >= -slack).all() &&
         ((upper - x).array() >= -slack).all();
}

Box propagate_box(const Network& net, const Box& box) {
  if (box.lower.size() != box.upper.size() ||
      static_cast<std::size_t>(box.lower.size()) != net.input_dim()) {
    throw ShapeError("propagate_box: box dimension does not match network input");
  }
  if (((box.upper - box.lower).array() < 0.0).any()) {
    throw DomainError("propagate_box: lower bound exceeds upper bound");
  }
  Vector lo = box.lower;
  Vector hi = box.upper;
  for (const Layer& layer : net.layers()) {
    switch (layer.kind) {
      case LayerKind::affine: {
        const Vector center = 0.5 * (lo + hi);
        const Vector radius = 0.5 * (hi - lo);
        const Vector c = layer.weights * center + layer.bias;
        const Vector r = layer.weights.cwiseAbs() * radius;
        lo = c - r;
        hi = c + r;
        break;
      }
      case LayerKind::relu:
        lo = lo.cwiseMax(0.0);
        hi = hi.cwiseMax(0.0);
        break;
      case LayerKind::clamp01:
      case LayerKind::clamp11: {
        // Both clamps are non-increasing.
        auto f = layer.kind == LayerKind::clamp01 ? clamp01 : clamp11;
        Vector new_lo = hi.unaryExpr(f);
        hi = lo.unaryExpr(f);
        lo = std::move(new_lo);
        break;
      }
    }
  }
  return {lo, hi};
}

json to_json(const SegmentChain& chain) {
  json vertices = json::array();
  for (std::size_t i = 0; i < chain.breakpoints(); ++i) {
    const auto col = chain.vertex(i);
    vertices.push_back(std::vector<double>(col.data(), col.data() + col.size()));
  }
  return {{"t", chain.t()}, {"vertices", std::move(vertices)}};
}

SegmentChain chain_from_json(const json& doc) {
  try {
    auto t = doc.at("t").get<std::vector<double>>();
    const json& verts = doc.at("vertices");
    if (verts.size() != t.size() || verts.empty()) {
      throw ShapeError("chain: vertex count does not match breakpoints");
    }
    const std::size_t dim = verts.front().size();
    Matrix v(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(t.size()));
    for (std::size_t i = 0; i < verts.size(); ++i) {
      if (verts[i].size() != dim) throw ShapeError("chain: ragged vertices");
      for (std::size_t j = 0; j < dim; ++j) {
        v(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = verts[i][j].get<double>();
      }
    }
    return SegmentChain(std::move(t), std::move(v));
  } catch (const json::exception& e) {
    throw FormatError(std::string("chain: ") + e.what());
  }
}

json to_json(const PropagationStats& stats) {
  return {{"pieces_per_layer", stats.pieces_per_layer}, {"wall_ms", stats.wall_ms}};
}

}  // namespace latcert
