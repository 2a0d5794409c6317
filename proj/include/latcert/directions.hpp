// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "latcert/network.hpp"

#include <json.hpp>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace latcert {

/// Keeps singular triples with sigma_i > relative_threshold * sigma_1.
struct RankPolicy {
  double relative_threshold = 1e-3;
};

/// Orthonormal latent basis. Columns [0, rank) mutate the output, the rest
/// are non-mutating.
struct DirectionBasis {
  Matrix V;
  /// Spectrum of the Jacobian Gram matrix, nonincreasing.
  Vector singular_values;
  std::size_t rank = 0;

  std::size_t dim() const { return static_cast<std::size_t>(V.cols()); }
  Vector direction(std::size_t i) const { return V.col(static_cast<Eigen::Index>(i)); }
};

/// Set of foreground output indices; every other index is background.
struct RegionMask {
  std::vector<std::size_t> foreground;

  /// Background indices for an output of the given size, validating the mask.
  std::vector<std::size_t> background(std::size_t output_dim) const;
};

struct MutationSpec {
  Vector direction;  // unit norm
  double delta_max = 0.0;
  std::optional<RegionMask> region;
  std::string label;
  /// Norm of the direction before renormalisation (1 for global directions).
  double projection_norm = 1.0;

  /// Throws DomainError unless the direction is unit norm and delta_max >= 0.
  void validate() const;
};

Matrix gram(const Matrix& jac);

struct LowRankSplit {
  Matrix low_rank;  // R*
  Matrix noise;     // E* = M - R*
  std::size_t rank = 0;
};

LowRankSplit low_rank_split(const Matrix& m, const RankPolicy& policy = {});

/// Eigen-decomposition of a symmetric PSD matrix into a DirectionBasis.
DirectionBasis basis_from_gram(const Matrix& m, const RankPolicy& policy = {});

DirectionBasis mutation_directions(const Network& generator, const Vector& z,
                                   const RankPolicy& policy = {});

Vector mutate(const Vector& z, const MutationSpec& spec, double delta);

/// Directions that move only the foreground: mutating directions of the
/// foreground Jacobian projected onto the background's non-mutating span.
/// Projections shorter than kMinProjection are dropped.
std::vector<MutationSpec> local_directions(const Network& generator, const Vector& z,
                                           const RegionMask& mask, const RankPolicy& policy = {},
                                           double delta_max = 1.0);

inline constexpr double kMinProjection = 1e-6;

std::vector<MutationSpec> global_specs(const DirectionBasis& basis, double delta_max,
                                       const std::string& prefix = "direction");

nlohmann::json to_json(const DirectionBasis& basis);
DirectionBasis basis_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const MutationSpec& spec);
MutationSpec spec_from_json(const nlohmann::json& doc);

}  // namespace latcert
