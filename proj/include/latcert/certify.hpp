// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "latcert/directions.hpp"
#include "latcert/network.hpp"
#include "latcert/segprop.hpp"

#include <json.hpp>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace latcert {

enum class Verdict { certified, falsified, unknown };

const char* to_string(Verdict v);

/// Bounds on the fraction of the segment that keeps the original decision.
struct QuantBounds {
  double lower = 0.0;
  double upper = 0.0;
  /// Parameter length of each output piece; sums to 1.
  std::vector<double> weights;
};

struct CertificateReport {
  Verdict verdict = Verdict::unknown;
  std::size_t reference_label = 0;
  /// Fraction of delta_max up to which the prediction provably holds.
  double max_tolerance = 0.0;
  /// Latent point whose prediction differs from the reference (falsified only).
  std::optional<Vector> flip_witness;
  std::optional<QuantBounds> quant;
  PropagationStats stats;

  double max_tolerance_abs(double delta_max) const { return max_tolerance * delta_max; }
};

/// Unique argmax of the logits; throws DegenerateInputError on ties within 1e-9.
std::size_t reference_label(const Vector& logits);

inline constexpr double kLabelTieTolerance = 1e-9;

/// Exact verdict by propagating the segment z -> z + delta_max * s through net.
CertificateReport certify_complete(const Network& net, const MutationSpec& spec, const Vector& z);

/// Same analysis on an already propagated chain of logits.
CertificateReport certify_chain(const SegmentChain& logits, const Segment& latent);

double max_tolerance(const Network& net, const MutationSpec& spec, const Vector& z);

/// Scalar-output chain; predicate is q > threshold when original_yes, else q <= threshold.
QuantBounds certify_quant(const SegmentChain& chain, double threshold = 0.5, bool original_yes = true);

/// Quantitative certificate for a scalar-output net; the original decision is
/// read at t = 0.
CertificateReport certify_quant(const Network& net, const MutationSpec& spec, const Vector& z,
                                double threshold = 0.5);

/// Interval analysis over `splits` consecutive boxes covering the segment.
/// Never falsifies.
CertificateReport certify_incomplete(const Network& net, const MutationSpec& spec, const Vector& z,
                                     std::size_t splits = 1);

nlohmann::json to_json(const CertificateReport& report);
nlohmann::json to_json(const QuantBounds& bounds);

}  // namespace latcert
