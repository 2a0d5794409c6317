// SPDX-License-Identifier: Apache-2.0
#include "latcert/metrics.hpp"

#include "latcert/errors.hpp"

#include <algorithm>
#include <cmath>

namespace latcert {

using nlohmann::json;

PixelBounds pixel_bounds(const SegmentChain& chain) {
  PixelBounds b;
  b.lower = chain.vertices().rowwise().minCoeff();
  b.upper = chain.vertices().rowwise().maxCoeff();
  std::vector<double> gaps(static_cast<std::size_t>(b.lower.size()));
  for (Eigen::Index i = 0; i < b.lower.size(); ++i) {
    gaps[static_cast<std::size_t>(i)] = b.upper[i] - b.lower[i];
  }
  if (!gaps.empty()) {
    double sum = 0.0;
    for (double g : gaps) sum += g;
    b.avg_distance = sum / static_cast<double>(gaps.size());
    std::sort(gaps.begin(), gaps.end());
    const std::size_t n = gaps.size();
    b.median_distance = n % 2 ? gaps[n / 2] : 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]);
  }
  return b;
}

ApdResult apd(const Vector& x, const Vector& x2) {
  if (x.size() != x2.size()) throw ShapeError("apd: images differ in size");
  ApdResult r;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double d = std::abs(x[i] - x2[i]);
    if (d > kChangedPixelTolerance) {
      sum += d;
      ++r.changed;
    }
  }
  r.no_change = r.changed == 0;
  r.value = r.no_change ? 0.0 : sum / static_cast<double>(r.changed);
  return r;
}

std::vector<double> growth_limits(const Network& net) {
  std::vector<double> limits;
  for (std::size_t k = 0; k < net.size(); ++k) {
    const auto width = static_cast<double>(net.dim_before(k));
    switch (net.layers()[k].kind) {
      case LayerKind::affine:
        limits.push_back(1.0);
        break;
      case LayerKind::relu:
        limits.push_back(width + 1.0);
        break;
      case LayerKind::clamp01:
      case LayerKind::clamp11:
        limits.push_back(2.0 * width + 1.0);
        break;
    }
  }
  return limits;
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("fit_slope: need two or more points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

CostReport cost_report(const std::vector<PropagationStats>& runs,
                       const std::vector<double>& limits) {
  if (runs.empty()) throw DomainError("cost_report: no propagation records");
  CostReport c;
  c.runs = runs.size();
  const std::size_t points = runs.front().pieces_per_layer.size();
  if (points == 0) throw DomainError("cost_report: empty propagation record");
  c.layers = points - 1;
  c.mean_pieces_per_layer.assign(points, 0.0);
  c.max_pieces_per_layer.assign(points, 0);
  for (const PropagationStats& run : runs) {
    if (run.pieces_per_layer.size() != points) {
      throw ShapeError("cost_report: records come from networks of different depth");
    }
    for (std::size_t k = 0; k < points; ++k) {
      const std::size_t p = run.pieces_per_layer[k];
      c.mean_pieces_per_layer[k] += static_cast<double>(p);
      c.max_pieces_per_layer[k] = std::max(c.max_pieces_per_layer[k], p);
      if (k > 0) {
        const double factor =
            static_cast<double>(p) / static_cast<double>(run.pieces_per_layer[k - 1]);
        c.max_growth_factor = std::max(c.max_growth_factor, factor);
        if (k - 1 < limits.size() && factor > limits[k - 1]) c.growth_bound_holds = false;
      }
    }
    c.total_wall_ms += run.wall_ms;
  }
  for (double& m : c.mean_pieces_per_layer) m /= static_cast<double>(runs.size());
  c.mean_wall_ms = c.total_wall_ms / static_cast<double>(runs.size());
  if (points >= 2) {
    std::vector<double> depth, logp;
    for (std::size_t k = 0; k < points; ++k) {
      depth.push_back(static_cast<double>(k));
      logp.push_back(std::log(c.mean_pieces_per_layer[k]));
    }
    c.log_pieces_slope = fit_slope(depth, logp);
  }
  return c;
}

json to_json(const PixelBounds& b) {
  return {{"lower", std::vector<double>(b.lower.data(), b.lower.data() + b.lower.size())},
          {"upper", std::vector<double>(b.upper.data(), b.upper.data() + b.upper.size())},
          {"avg_distance", b.avg_distance},
          {"median_distance", b.median_distance}};
}

json to_json(const CostReport& c) {
  return {{"runs", c.runs},
          {"layers", c.layers},
          {"mean_pieces_per_layer", c.mean_pieces_per_layer},
          {"max_pieces_per_layer", c.max_pieces_per_layer},
          {"max_growth_factor", c.max_growth_factor},
          {"log_pieces_slope", c.log_pieces_slope},
          {"growth_bound_holds", c.growth_bound_holds},
          {"total_wall_ms", c.total_wall_ms},
          {"mean_wall_ms", c.mean_wall_ms}};
}

}  // namespace latcert
