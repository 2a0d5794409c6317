// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "latcert/network.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace latcert {

using Rng = std::mt19937_64;

struct LatentPrior {
  enum class Kind { uniform, normal };
  Kind kind = Kind::uniform;
  /// Half-width for uniform, standard deviation for normal.
  double scale = 1.0;

  Vector sample(std::size_t dim, Rng& rng) const;
};

/// Two prior draws and a point between them: z_t = z0 + lambda (zT - z0).
struct TripletSample {
  Vector z0;
  Vector zT;
  double lambda = 0.0;

  Vector zt() const { return z0 + lambda * (zT - z0); }
  static TripletSample draw(const LatentPrior& prior, std::size_t dim, Rng& rng);
};

enum class ContinuitySign {
  /// || lambda G(zT) + (1 - lambda) G(z0) - G(zt) ||, zero at both ends.
  convex,
  /// || lambda G(zT) - G(zt) - (1 - lambda) G(z0) || as literally printed.
  literal,
};

double continuity_loss(const Network& g, const TripletSample& s,
                       ContinuitySign sign = ContinuitySign::convex);

/// Variant for extent-conditioned generators whose input is [a; delta]:
/// || eta G(a, dT) + (1 - eta) G(a, d0) - G(a, d0 + eta (dT - d0)) ||.
double conditioned_continuity_loss(const Network& g, const Vector& a, const Vector& delta0,
                                   const Vector& deltaT, double eta);

/// Paired latent codes and target outputs, one sample per column.
struct TrainingSet {
  Matrix latents;
  Matrix targets;

  std::size_t size() const { return static_cast<std::size_t>(latents.cols()); }
};

struct TrainConfig {
  int epochs = 10;
  double lr = 0.05;
  std::uint64_t seed = 0;
  /// Weight of the continuity term; 0 trains on reconstruction only.
  double loss_weight = 0.0;
  std::size_t batch_size = 32;
  /// Continuity triplets drawn per minibatch; 0 means batch_size.
  std::size_t triplets_per_batch = 0;
  /// Backward slope magnitude on the flat parts of output clamps. The forward
  /// pass is unchanged; a correctly saturated output has zero error anyway.
  double saturated_slope = 0.3;
  LatentPrior prior;
  ContinuitySign sign = ContinuitySign::convex;
};

struct EpochLoss {
  int epoch = 0;
  double reconstruction = 0.0;
  double continuity = 0.0;
};

struct TrainResult {
  Network network;
  std::vector<EpochLoss> history;
};

/// Mean squared error per output coordinate over the whole set.
double reconstruction_loss(const Network& g, const TrainingSet& data);

/// Average continuity loss over freshly drawn triplets.
double mean_continuity_loss(const Network& g, const LatentPrior& prior, std::size_t samples,
                            std::uint64_t seed);

/// Minibatch SGD on reconstruction + loss_weight * continuity. Deterministic
/// for a given seed; throws TrainingError if the loss stops being finite.
TrainResult regulate_train(const Network& g0, const TrainingSet& data, const TrainConfig& config);

/// sum_{i<n} || G(z + (i+1) dz) - G(z + i dz) || with dz = (z2 - z) / n.
double curve_length(const Network& g, const Vector& z, const Vector& z2, std::size_t n);

struct ContinuityEstimate {
  double C = 1.0;
  std::size_t samples = 0;
  /// Summary of curve length / latent distance.
  double min_ratio = 0.0;
  double max_ratio = 0.0;
  double q05 = 0.0;
  double q50 = 0.0;
  double q95 = 0.0;
};

ContinuityEstimate estimate_C(const Network& g, const LatentPrior& prior, std::size_t samples,
                              std::uint64_t seed, std::size_t steps = 64);

nlohmann::json to_json(const ContinuityEstimate& c);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& doc);
/// CSV with header "epoch,L1,L2".
std::string loss_history_csv(const std::vector<EpochLoss>& history);

}  // namespace latcert
