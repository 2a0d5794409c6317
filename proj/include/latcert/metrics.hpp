// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "latcert/network.hpp"
#include "latcert/segprop.hpp"

#include <json.hpp>

#include <cstddef>
#include <vector>

namespace latcert {

/// Per-coordinate range of a chain.
struct PixelBounds {
  Vector lower;
  Vector upper;
  double avg_distance = 0.0;
  double median_distance = 0.0;
};

/// Extremes of an affine piece sit at its ends, so breakpoints suffice.
PixelBounds pixel_bounds(const SegmentChain& chain);

struct ApdResult {
  double value = 0.0;
  std::size_t changed = 0;
  /// True when no coordinate differs (value is then 0).
  bool no_change = false;
};

inline constexpr double kChangedPixelTolerance = 1e-9;

/// Mean absolute difference over the coordinates that differ.
ApdResult apd(const Vector& x, const Vector& x2);

struct CostReport {
  std::size_t runs = 0;
  std::size_t layers = 0;
  std::vector<double> mean_pieces_per_layer;
  std::vector<std::size_t> max_pieces_per_layer;
  /// Largest observed pieces[k+1] / pieces[k].
  double max_growth_factor = 1.0;
  /// Slope of log(mean pieces) against layer index.
  double log_pieces_slope = 0.0;
  bool growth_bound_holds = true;
  double total_wall_ms = 0.0;
  double mean_wall_ms = 0.0;
};

/// Largest factor by which each layer can multiply the piece count: 1 for
/// affine, N + 1 for a relu of width N, 2N + 1 for a clamp (two kinks).
std::vector<double> growth_limits(const Network& net);

/// `limits[k]` bounds the growth across layer k; pass growth_limits(net).
CostReport cost_report(const std::vector<PropagationStats>& runs,
                       const std::vector<double>& limits);

/// Least-squares slope of y against x.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y);

nlohmann::json to_json(const PixelBounds& b);
nlohmann::json to_json(const CostReport& c);

}  // namespace latcert
