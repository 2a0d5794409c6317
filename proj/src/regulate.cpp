// SPDX-License-Identifier: Apache-2.0
#include "latcert/regulate.hpp"

#include "latcert/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

namespace latcert {

using nlohmann::json;

Vector LatentPrior::sample(std::size_t dim, Rng& rng) const {
  Vector z(static_cast<Eigen::Index>(dim));
  if (kind == Kind::uniform) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = u(rng);
  } else {
    std::normal_distribution<double> n(0.0, scale);
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = n(rng);
  }
  return z;
}

TripletSample TripletSample::draw(const LatentPrior& prior, std::size_t dim, Rng& rng) {
  TripletSample s;
  s.z0 = prior.sample(dim, rng);
  s.zT = prior.sample(dim, rng);
  s.lambda = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return s;
}

namespace {

Vector continuity_residual(const Vector& g0, const Vector& gT, const Vector& gt, double lambda,
                           ContinuitySign sign) {
  if (sign == ContinuitySign::convex) return lambda * gT + (1.0 - lambda) * g0 - gt;
  return lambda * gT - gt - (1.0 - lambda) * g0;
}

}  // namespace

double continuity_loss(const Network& g, const TripletSample& s, ContinuitySign sign) {
  if (s.lambda < 0.0 || s.lambda > 1.0) throw RangeError("continuity_loss: lambda outside [0, 1]");
  Matrix z(s.z0.size(), 3);
  z.col(0) = s.z0;
  z.col(1) = s.zT;
  z.col(2) = s.zt();
  const Matrix out = forward_batch(g, z);
  return continuity_residual(out.col(0), out.col(1), out.col(2), s.lambda, sign).norm();
}

double conditioned_continuity_loss(const Network& g, const Vector& a, const Vector& delta0,
                                   const Vector& deltaT, double eta) {
  if (eta < 0.0 || eta > 1.0) throw RangeError("conditioned_continuity_loss: eta outside [0, 1]");
  if (delta0.size() != deltaT.size()) throw ShapeError("conditioned_continuity_loss: extents differ");
  const Eigen::Index na = a.size();
  const Eigen::Index nd = delta0.size();
  Matrix in(na + nd, 3);
  in.col(0) << a, delta0;
  in.col(1) << a, deltaT;
  in.col(2) << a, delta0 + eta * (deltaT - delta0);
  const Matrix out = forward_batch(g, in);
  return (eta * out.col(1) + (1.0 - eta) * out.col(0) - out.col(2)).norm();
}

double reconstruction_loss(const Network& g, const TrainingSet& data) {
  if (data.size() == 0) throw DomainError("reconstruction_loss: empty training set");
  double sum = 0.0;
  constexpr Eigen::Index kChunk = 512;
  for (Eigen::Index c = 0; c < data.latents.cols(); c += kChunk) {
    const Eigen::Index n = std::min(kChunk, data.latents.cols() - c);
    const Matrix out = forward_batch(g, data.latents.middleCols(c, n));
    sum += (out - data.targets.middleCols(c, n)).squaredNorm();
  }
  return sum / static_cast<double>(data.targets.size());
}

double mean_continuity_loss(const Network& g, const LatentPrior& prior, std::size_t samples,
                            std::uint64_t seed) {
  if (samples == 0) throw RangeError("mean_continuity_loss: need at least one sample");
  Rng rng(seed);
  const std::size_t d = g.input_dim();
  const auto n = static_cast<Eigen::Index>(samples);
  Matrix z(static_cast<Eigen::Index>(d), 3 * n);
  std::vector<double> lambdas(samples);
  for (Eigen::Index i = 0; i < n; ++i) {
    TripletSample s = TripletSample::draw(prior, d, rng);
    z.col(i) = s.z0;
    z.col(n + i) = s.zT;
    z.col(2 * n + i) = s.zt();
    lambdas[static_cast<std::size_t>(i)] = s.lambda;
  }
  const Matrix out = forward_batch(g, z);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    sum += continuity_residual(out.col(i), out.col(n + i), out.col(2 * n + i),
                               lambdas[static_cast<std::size_t>(i)], ContinuitySign::convex)
               .norm();
  }
  return sum / static_cast<double>(samples);
}

namespace {

// Slope used for backpropagation; kinks take the inactive side. The flat
// parts of a clamp pass `leak` so that wrongly saturated outputs recover.
double train_slope(LayerKind kind, double v, double leak) {
  switch (kind) {
    case LayerKind::relu:
      return v > 0.0 ? 1.0 : 0.0;
    case LayerKind::clamp01:
      return (v > 0.0 && v < 1.0) ? -1.0 : -leak;
    case LayerKind::clamp11:
      return (v > 0.0 && v < 2.0) ? -1.0 : -leak;
    case LayerKind::affine:
      break;
  }
  return 0.0;
}

// Batch forward/backward over a private copy of the layers.
class Backprop {
 public:
  Backprop(const Network& net, double leak)
      : layers_(net.layers()), input_dim_(net.input_dim()), leak_(leak) {
    grads_w_.resize(layers_.size());
    grads_b_.resize(layers_.size());
    inputs_.resize(layers_.size());
  }

  Matrix forward(const Matrix& x) {
    Matrix values = x;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const Layer& layer = layers_[k];
      inputs_[k] = values;
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

  void backward(Matrix grad) {
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const Layer& layer = layers_[k];
      if (layer.kind == LayerKind::affine) {
        grads_w_[k] = grad * inputs_[k].transpose();
        grads_b_[k] = grad.rowwise().sum();
        if (k > 0) grad = layer.weights.transpose() * grad;
      } else {
        const Matrix& pre = inputs_[k];
        const LayerKind kind = layer.kind;
        const double leak = leak_;
        grad.array() *=
            pre.unaryExpr([kind, leak](double v) { return train_slope(kind, v, leak); }).array();
      }
    }
  }

  bool step(double lr) {
    bool finite = true;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      Layer& layer = layers_[k];
      if (layer.kind != LayerKind::affine) continue;
      layer.weights.noalias() -= lr * grads_w_[k];
      layer.bias.noalias() -= lr * grads_b_[k];
      finite = finite && layer.weights.allFinite() && layer.bias.allFinite();
    }
    return finite;
  }

  Network network(const std::string& name) const { return Network(name, input_dim_, layers_); }

 private:
  std::vector<Layer> layers_;
  std::size_t input_dim_;
  double leak_;
  std::vector<Matrix> inputs_;
  std::vector<Matrix> grads_w_;
  std::vector<Vector> grads_b_;
};

}  // namespace

TrainResult regulate_train(const Network& g0, const TrainingSet& data, const TrainConfig& config) {
  if (data.size() == 0) throw DomainError("regulate_train: empty training set");
  if (static_cast<std::size_t>(data.latents.rows()) != g0.input_dim() ||
      static_cast<std::size_t>(data.targets.rows()) != g0.output_dim() ||
      data.latents.cols() != data.targets.cols()) {
    throw ShapeError("regulate_train: training set does not match the generator's shape");
  }
  if (config.epochs < 0 || config.batch_size == 0 || !(config.lr > 0.0) ||
      config.loss_weight < 0.0 || config.saturated_slope < 0.0) {
    throw RangeError("regulate_train: invalid configuration");
  }
  TrainResult result{g0, {}};
  if (config.epochs == 0) return result;

  Rng rng(config.seed);
  Backprop bp(g0, config.saturated_slope);
  const std::size_t n = data.size();
  const std::size_t d = g0.input_dim();
  const auto out_dim = static_cast<double>(g0.output_dim());
  const bool regulate = config.loss_weight > 0.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double l1_sum = 0.0;
    double l2_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, n - start);
      const auto bi = static_cast<Eigen::Index>(b);
      const Eigen::Index tri =
          regulate ? static_cast<Eigen::Index>(config.triplets_per_batch ? config.triplets_per_batch : b)
                   : 0;
      Matrix input(static_cast<Eigen::Index>(d), bi + 3 * tri);
      Matrix target(data.targets.rows(), bi);
      for (std::size_t i = 0; i < b; ++i) {
        input.col(static_cast<Eigen::Index>(i)) = data.latents.col(static_cast<Eigen::Index>(order[start + i]));
        target.col(static_cast<Eigen::Index>(i)) = data.targets.col(static_cast<Eigen::Index>(order[start + i]));
      }
      std::vector<double> lambdas(static_cast<std::size_t>(tri));
      for (Eigen::Index i = 0; i < tri; ++i) {
        TripletSample s = TripletSample::draw(config.prior, d, rng);
        input.col(bi + i) = s.z0;
        input.col(bi + tri + i) = s.zT;
        input.col(bi + 2 * tri + i) = s.zt();
        lambdas[static_cast<std::size_t>(i)] = s.lambda;
      }

      const Matrix out = bp.forward(input);
      Matrix grad(out.rows(), out.cols());
      const Matrix err = out.leftCols(bi) - target;
      const double l1 = err.squaredNorm() / (static_cast<double>(b) * out_dim);
      grad.leftCols(bi) = (2.0 / (static_cast<double>(b) * out_dim)) * err;

      double l2 = 0.0;
      for (Eigen::Index i = 0; i < tri; ++i) {
        const double lambda = lambdas[static_cast<std::size_t>(i)];
        const Vector r = continuity_residual(out.col(bi + i), out.col(bi + tri + i),
                                             out.col(bi + 2 * tri + i), lambda, config.sign);
        const double norm = r.norm();
        l2 += norm;
        const Vector g = norm > 0.0 ? Vector(config.loss_weight / (static_cast<double>(tri) * norm) * r)
                                    : Vector::Zero(r.size());
        const double s0 = config.sign == ContinuitySign::convex ? (1.0 - lambda) : -(1.0 - lambda);
        grad.col(bi + i) = s0 * g;
        grad.col(bi + tri + i) = lambda * g;
        grad.col(bi + 2 * tri + i) = -g;
      }
      if (tri > 0) l2 /= static_cast<double>(tri);

      if (!std::isfinite(l1) || !std::isfinite(l2)) {
        throw TrainingError("regulate_train: loss is not finite", epoch);
      }
      bp.backward(std::move(grad));
      if (!bp.step(config.lr)) throw TrainingError("regulate_train: parameters diverged", epoch);
      l1_sum += l1;
      l2_sum += l2;
      ++batches;
    }
    EpochLoss record;
    record.epoch = epoch;
    record.reconstruction = l1_sum / static_cast<double>(batches);
    record.continuity = regulate ? l2_sum / static_cast<double>(batches)
                                 : mean_continuity_loss(bp.network(g0.name()), config.prior, 256,
                                                        config.seed ^ 0x9e3779b97f4a7c15ULL);
    result.history.push_back(record);
  }
  result.network = bp.network(g0.name());
  return result;
}

double curve_length(const Network& g, const Vector& z, const Vector& z2, std::size_t n) {
  if (n < 1) throw RangeError("curve_length: need at least one step");
  if (z.size() != z2.size()) throw ShapeError("curve_length: endpoints differ in dimension");
  const Vector dz = (z2 - z) / static_cast<double>(n);
  constexpr std::size_t kChunk = 1024;
  double length = 0.0;
  Vector prev = forward(g, z);
  for (std::size_t first = 1; first <= n; first += kChunk) {
    const std::size_t count = std::min(kChunk, n + 1 - first);
    Matrix pts(z.size(), static_cast<Eigen::Index>(count));
    for (std::size_t i = 0; i < count; ++i) {
      pts.col(static_cast<Eigen::Index>(i)) = z + static_cast<double>(first + i) * dz;
    }
    const Matrix out = forward_batch(g, pts);
    for (Eigen::Index i = 0; i < out.cols(); ++i) {
      length += (out.col(i) - prev).norm();
      prev = out.col(i);
    }
  }
  return length;
}

namespace {

double quantile(std::vector<double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

ContinuityEstimate estimate_C(const Network& g, const LatentPrior& prior, std::size_t samples,
                              std::uint64_t seed, std::size_t steps) {
  if (samples < 2) throw RangeError("estimate_C: need at least two samples");
  Rng rng(seed);
  std::vector<double> ratios;
  ratios.reserve(samples);
  while (ratios.size() < samples) {
    const Vector z = prior.sample(g.input_dim(), rng);
    const Vector z2 = prior.sample(g.input_dim(), rng);
    const double dist = (z2 - z).norm();
    if (dist < 1e-9) continue;
    ratios.push_back(curve_length(g, z, z2, steps) / dist);
  }
  std::sort(ratios.begin(), ratios.end());
  ContinuityEstimate est;
  est.samples = samples;
  est.min_ratio = ratios.front();
  est.max_ratio = ratios.back();
  est.q05 = quantile(ratios, 0.05);
  est.q50 = quantile(ratios, 0.50);
  est.q95 = quantile(ratios, 0.95);
  const double inv = est.min_ratio > 0.0 ? 1.0 / est.min_ratio
                                         : std::numeric_limits<double>::infinity();
  est.C = std::max({1.0, est.max_ratio, inv});
  return est;
}

json to_json(const ContinuityEstimate& c) {
  return {{"C", c.C},       {"samples", c.samples}, {"min_ratio", c.min_ratio},
          {"max_ratio", c.max_ratio}, {"q05", c.q05}, {"q50", c.q50}, {"q95", c.q95}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.lr},
          {"seed", c.seed},
          {"loss_weight", c.loss_weight},
          {"batch_size", c.batch_size},
          {"triplets_per_batch", c.triplets_per_batch},
          {"saturated_slope", c.saturated_slope},
          {"prior", c.prior.kind == LatentPrior::Kind::uniform ? "uniform" : "normal"},
          {"prior_scale", c.prior.scale},
          {"sign", c.sign == ContinuitySign::convex ? "convex" : "literal"}};
}

TrainConfig train_config_from_json(const json& doc) {
  TrainConfig c;
  try {
    c.epochs = doc.value("epochs", c.epochs);
    c.lr = doc.value("lr", c.lr);
    c.seed = doc.value("seed", c.seed);
    c.loss_weight = doc.value("loss_weight", c.loss_weight);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.triplets_per_batch = doc.value("triplets_per_batch", c.triplets_per_batch);
    c.saturated_slope = doc.value("saturated_slope", c.saturated_slope);
    const std::string prior = doc.value("prior", std::string("uniform"));
    if (prior == "uniform") {
      c.prior.kind = LatentPrior::Kind::uniform;
    } else if (prior == "normal") {
      c.prior.kind = LatentPrior::Kind::normal;
    } else {
      throw FormatError("train config: unknown prior '" + prior + "'");
    }
    c.prior.scale = doc.value("prior_scale", c.prior.scale);
    const std::string sign = doc.value("sign", std::string("convex"));
    if (sign == "convex") {
      c.sign = ContinuitySign::convex;
    } else if (sign == "literal") {
      c.sign = ContinuitySign::literal;
    } else {
      throw FormatError("train config: unknown sign '" + sign + "'");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  return c;
}

namespace {

// Shortest text that reads back to the same double.
std::string shortest(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string loss_history_csv(const std::vector<EpochLoss>& history) {
  std::string out = "epoch,L1,L2\n";
  for (const EpochLoss& e : history) {
    out += std::to_string(e.epoch) + ',' + shortest(e.reconstruction) + ',' + shortest(e.continuity) + '\n';
  }
  return out;
}

}  // namespace latcert
