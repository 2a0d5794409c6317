// SPDX-License-Identifier: Apache-2.0
#include "latcert/directions.hpp"

#include "latcert/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace latcert {

using nlohmann::json;

std::vector<std::size_t> RegionMask::background(std::size_t output_dim) const {
  std::vector<bool> in_fg(output_dim, false);
  for (std::size_t i : foreground) {
    if (i >= output_dim) {
      throw RangeError("region mask index " + std::to_string(i) + " outside output of size " +
                       std::to_string(output_dim));
    }
    if (in_fg[i]) throw DomainError("region mask lists index " + std::to_string(i) + " twice");
    in_fg[i] = true;
  }
  std::vector<std::size_t> bg;
  for (std::size_t i = 0; i < output_dim; ++i) {
    if (!in_fg[i]) bg.push_back(i);
  }
  return bg;
}

void MutationSpec::validate() const {
  if (direction.size() == 0 || !direction.allFinite()) {
    throw DomainError("mutation '" + label + "': direction is empty or not finite");
  }
  if (std::abs(direction.norm() - 1.0) > 1e-9) {
    throw DomainError("mutation '" + label + "': direction is not unit norm");
  }
  if (!(delta_max >= 0.0) || !std::isfinite(delta_max)) {
    throw DomainError("mutation '" + label + "': delta_max must be finite and nonnegative");
  }
}

Matrix gram(const Matrix& jac) { return jac.transpose() * jac; }

namespace {

struct SortedEigen {
  Matrix vectors;  // columns, eigenvalues nonincreasing
  Vector values;
};

SortedEigen sorted_eigen(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("expected a square matrix");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw DomainError("matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (m + m.transpose()));
  if (solver.info() != Eigen::Success) throw DomainError("eigen-decomposition failed");
  const Eigen::Index n = m.rows();
  SortedEigen out{Matrix(n, n), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    // Eigen returns ascending order.
    out.values[i] = std::max(0.0, solver.eigenvalues()[n - 1 - i]);
    Vector v = solver.eigenvectors().col(n - 1 - i);
    Eigen::Index pivot = 0;
    v.cwiseAbs().maxCoeff(&pivot);
    if (v[pivot] < 0.0) v = -v;
    out.vectors.col(i) = v;
  }
  return out;
}

std::size_t policy_rank(const Vector& values, const RankPolicy& policy) {
  if (values.size() == 0 || values[0] <= 0.0) return 0;
  const double cutoff = policy.relative_threshold * values[0];
  return static_cast<std::size_t>((values.array() > cutoff).count());
}

}  // namespace

LowRankSplit low_rank_split(const Matrix& m, const RankPolicy& policy) {
  SortedEigen eig = sorted_eigen(m);
  LowRankSplit out;
  out.rank = policy_rank(eig.values, policy);
  const auto r = static_cast<Eigen::Index>(out.rank);
  const auto vr = eig.vectors.leftCols(r);
  out.low_rank = vr * eig.values.head(r).asDiagonal() * vr.transpose();
  out.noise = m - out.low_rank;
  return out;
}

DirectionBasis basis_from_gram(const Matrix& m, const RankPolicy& policy) {
  SortedEigen eig = sorted_eigen(m);
  DirectionBasis basis;
  basis.rank = policy_rank(eig.values, policy);
  basis.V = std::move(eig.vectors);
  basis.singular_values = std::move(eig.values);
  return basis;
}

DirectionBasis mutation_directions(const Network& generator, const Vector& z,
                                   const RankPolicy& policy) {
  return basis_from_gram(gram(jacobian(generator, z).matrix), policy);
}

Vector mutate(const Vector& z, const MutationSpec& spec, double delta) {
  if (!(delta >= 0.0 && delta <= spec.delta_max)) {
    throw RangeError("mutate: delta " + std::to_string(delta) + " outside [0, " +
                     std::to_string(spec.delta_max) + "]");
  }
  if (z.size() != spec.direction.size()) throw ShapeError("mutate: dimension mismatch");
  return z + delta * spec.direction;
}

std::vector<MutationSpec> global_specs(const DirectionBasis& basis, double delta_max,
                                       const std::string& prefix) {
  std::vector<MutationSpec> specs;
  for (std::size_t i = 0; i < basis.rank; ++i) {
    MutationSpec spec;
    spec.direction = basis.direction(i);
    spec.delta_max = delta_max;
    spec.label = prefix + "-" + std::to_string(i);
    specs.push_back(std::move(spec));
  }
  return specs;
}

namespace {

Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace

std::vector<MutationSpec> local_directions(const Network& generator, const Vector& z,
                                           const RegionMask& mask, const RankPolicy& policy,
                                           double delta_max) {
  const std::vector<std::size_t> bg = mask.background(generator.output_dim());
  if (mask.foreground.empty()) throw DomainError("local_directions: empty foreground");
  if (bg.empty()) {
    // The whole image is the foreground: plain global mutation.
    auto specs = global_specs(mutation_directions(generator, z, policy), delta_max, "global");
    for (auto& s : specs) s.region = mask;
    return specs;
  }
  const Matrix jac = jacobian(generator, z).matrix;
  const DirectionBasis fg_basis = basis_from_gram(gram(select_rows(jac, mask.foreground)), policy);
  const DirectionBasis bg_basis = basis_from_gram(gram(select_rows(jac, bg)), policy);

  const auto d = static_cast<Eigen::Index>(bg_basis.dim());
  const auto rb = static_cast<Eigen::Index>(bg_basis.rank);
  const Matrix B = bg_basis.V.rightCols(d - rb);

  std::vector<MutationSpec> specs;
  for (std::size_t i = 0; i < fg_basis.rank; ++i) {
    const Vector projected = B * (B.transpose() * fg_basis.direction(i));
    const double norm = projected.norm();
    if (norm < kMinProjection) continue;
    MutationSpec spec;
    spec.direction = projected / norm;
    spec.delta_max = delta_max;
    spec.region = mask;
    spec.label = "local-" + std::to_string(i);
    spec.projection_norm = norm;
    specs.push_back(std::move(spec));
  }
  return specs;
}

namespace {

json matrix_rows(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(std::move(row));
  }
  return rows;
}

Vector vector_from(const json& arr) {
  auto v = arr.get<std::vector<double>>();
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

json to_json(const DirectionBasis& basis) {
  return {{"V", matrix_rows(basis.V)},
          {"sigma", std::vector<double>(basis.singular_values.data(),
                                        basis.singular_values.data() + basis.singular_values.size())},
          {"rank", basis.rank}};
}

DirectionBasis basis_from_json(const json& doc) {
  try {
    DirectionBasis basis;
    const json& rows = doc.at("V");
    const auto n = static_cast<Eigen::Index>(rows.size());
    basis.V.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)].size()) != n) {
        throw ShapeError("basis: V must be square");
      }
      basis.V.row(r) = vector_from(rows[static_cast<std::size_t>(r)]).transpose();
    }
    basis.singular_values = vector_from(doc.at("sigma"));
    basis.rank = doc.at("rank").get<std::size_t>();
    if (basis.singular_values.size() != n || basis.rank > static_cast<std::size_t>(n)) {
      throw ShapeError("basis: sigma/rank inconsistent with V");
    }
    return basis;
  } catch (const json::exception& e) {
    throw FormatError(std::string("basis: ") + e.what());
  }
}

json to_json(const MutationSpec& spec) {
  json doc = {{"s", std::vector<double>(spec.direction.data(),
                                         spec.direction.data() + spec.direction.size())},
              {"delta_max", spec.delta_max},
              {"label", spec.label}};
  doc["mask"] = spec.region ? json(spec.region->foreground) : json::array();
  if (spec.projection_norm != 1.0) doc["projection_norm"] = spec.projection_norm;
  return doc;
}

MutationSpec spec_from_json(const json& doc) {
  try {
    MutationSpec spec;
    spec.direction = vector_from(doc.at("s"));
    spec.delta_max = doc.at("delta_max").get<double>();
    spec.label = doc.value("label", std::string());
    if (doc.contains("mask") && !doc.at("mask").empty()) {
      spec.region = RegionMask{doc.at("mask").get<std::vector<std::size_t>>()};
    }
    spec.projection_norm = doc.value("projection_norm", 1.0);
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw FormatError(std::string("mutation spec: ") + e.what());
  }
}

}  // namespace latcert
