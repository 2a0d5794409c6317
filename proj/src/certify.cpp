// SPDX-License-Identifier: Apache-2.0
#include "latcert/certify.hpp"

#include "latcert/errors.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

namespace latcert {

using nlohmann::json;

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::certified:
      return "certified";
    case Verdict::falsified:
      return "falsified";
    case Verdict::unknown:
      return "unknown";
  }
  return "?";
}

std::size_t reference_label(const Vector& logits) {
  if (logits.size() == 0) throw ShapeError("reference_label: empty logits");
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  for (Eigen::Index c = 0; c < logits.size(); ++c) {
    if (c != best && logits[best] - logits[c] <= kLabelTieTolerance) {
      throw DegenerateInputError("reference prediction is tied between classes " +
                                 std::to_string(best) + " and " + std::to_string(c));
    }
  }
  return static_cast<std::size_t>(best);
}

namespace {

Segment mutation_segment(const MutationSpec& spec, const Vector& z) {
  spec.validate();
  if (z.size() != spec.direction.size()) {
    throw ShapeError("mutation direction has dimension " + std::to_string(spec.direction.size()) +
                     ", latent point has " + std::to_string(z.size()));
  }
  return {z, z + spec.delta_max * spec.direction};
}

}  // namespace

CertificateReport certify_chain(const SegmentChain& logits, const Segment& latent) {
  CertificateReport report;
  const Vector first = logits.vertex(0);
  const auto ref = static_cast<Eigen::Index>(reference_label(first));
  report.reference_label = static_cast<std::size_t>(ref);

  const auto& t = logits.t();
  const Matrix& v = logits.vertices();
  for (std::size_t p = 0; p + 1 < t.size(); ++p) {
    const auto a = v.col(static_cast<Eigen::Index>(p));
    const auto b = v.col(static_cast<Eigen::Index>(p + 1));
    double earliest = std::numeric_limits<double>::infinity();
    double margin_after = 0.0;
    for (Eigen::Index c = 0; c < v.rows(); ++c) {
      if (c == ref) continue;
      const double d0 = a[ref] - a[c];
      const double d1 = b[ref] - b[c];
      if (d1 > 0.0) continue;
      // d0 > 0 here: it is the previous piece's d1, or the unique start.
      const double lambda = d0 / (d0 - d1);
      const double root = t[p] + lambda * (t[p + 1] - t[p]);
      if (root < earliest) {
        earliest = root;
        margin_after = d1;
      }
    }
    if (earliest <= t[p + 1]) {
      report.verdict = Verdict::falsified;
      report.max_tolerance = earliest;
      // Strictly past the root the violated difference is negative.
      const double tw = margin_after < 0.0 ? 0.5 * (earliest + t[p + 1]) : t[p + 1];
      report.flip_witness = latent.at(tw);
      return report;
    }
  }
  report.verdict = Verdict::certified;
  report.max_tolerance = 1.0;
  return report;
}

CertificateReport certify_complete(const Network& net, const MutationSpec& spec, const Vector& z) {
  const Segment seg = mutation_segment(spec, z);
  Propagation prop = propagate_segment(net, seg);
  CertificateReport report = certify_chain(prop.chain, seg);
  report.stats = std::move(prop.stats);
  return report;
}

double max_tolerance(const Network& net, const MutationSpec& spec, const Vector& z) {
  return certify_complete(net, spec, z).max_tolerance;
}

QuantBounds certify_quant(const SegmentChain& chain, double threshold, bool original_yes) {
  if (chain.dim() != 1) {
    throw ShapeError("certify_quant: expected a scalar chain, got dimension " +
                     std::to_string(chain.dim()));
  }
  auto keeps = [&](double q) { return original_yes ? q > threshold : q <= threshold; };
  QuantBounds out;
  const auto& t = chain.t();
  for (std::size_t p = 0; p + 1 < t.size(); ++p) {
    const double w = t[p + 1] - t[p];
    out.weights.push_back(w);
    const bool a = keeps(chain.vertices()(0, static_cast<Eigen::Index>(p)));
    const bool b = keeps(chain.vertices()(0, static_cast<Eigen::Index>(p + 1)));
    // On an affine piece the kept set is an interval touching an endpoint.
    if (a && b) out.lower += w;
    if (a || b) out.upper += w;
  }
  out.lower = std::clamp(out.lower, 0.0, 1.0);
  out.upper = std::clamp(out.upper, out.lower, 1.0);
  return out;
}

CertificateReport certify_quant(const Network& net, const MutationSpec& spec, const Vector& z,
                                double threshold) {
  if (net.output_dim() != 1) throw ShapeError("certify_quant: network must have a scalar output");
  const Segment seg = mutation_segment(spec, z);
  Propagation prop = propagate_segment(net, seg);
  const SegmentChain& chain = prop.chain;
  const bool yes = chain.vertices()(0, 0) > threshold;

  CertificateReport report;
  report.reference_label = yes ? 1 : 0;
  report.quant = certify_quant(chain, threshold, yes);
  report.stats = std::move(prop.stats);
  report.verdict = Verdict::certified;
  report.max_tolerance = 1.0;

  // margin >= 0 keeps the decision ("yes" additionally needs it strictly).
  auto margin = [&](std::size_t i) {
    const double q = chain.vertices()(0, static_cast<Eigen::Index>(i));
    return yes ? q - threshold : threshold - q;
  };
  auto fails = [&](double m) { return yes ? m <= 0.0 : m < 0.0; };
  const auto& t = chain.t();
  for (std::size_t p = 0; p + 1 < t.size(); ++p) {
    const double m0 = margin(p);
    const double m1 = margin(p + 1);
    if (!fails(m1)) continue;
    const double root = m0 == m1 ? t[p] : t[p] + m0 / (m0 - m1) * (t[p + 1] - t[p]);
    report.verdict = Verdict::falsified;
    report.max_tolerance = root;
    report.flip_witness = seg.at(t[p + 1]);
    break;
  }
  return report;
}

CertificateReport certify_incomplete(const Network& net, const MutationSpec& spec, const Vector& z,
                                     std::size_t splits) {
  if (splits == 0) throw RangeError("certify_incomplete: splits must be positive");
  const Segment seg = mutation_segment(spec, z);
  const auto begin = std::chrono::steady_clock::now();

  CertificateReport report;
  const auto ref = static_cast<Eigen::Index>(reference_label(forward(net, z)));
  report.reference_label = static_cast<std::size_t>(ref);
  report.verdict = Verdict::certified;
  report.max_tolerance = 1.0;
  for (std::size_t k = 0; k < splits; ++k) {
    const double t0 = static_cast<double>(k) / static_cast<double>(splits);
    const double t1 = static_cast<double>(k + 1) / static_cast<double>(splits);
    const Box out = propagate_box(net, Box::hull({seg.at(t0), seg.at(t1)}));
    bool proven = true;
    for (Eigen::Index c = 0; c < out.lower.size() && proven; ++c) {
      if (c != ref && !(out.lower[ref] > out.upper[c])) proven = false;
    }
    if (!proven) {
      report.verdict = Verdict::unknown;
      report.max_tolerance = t0;
      break;
    }
  }
  report.stats.pieces_per_layer.assign(net.size() + 1, splits);
  report.stats.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - begin).count();
  return report;
}

json to_json(const QuantBounds& bounds) {
  return {{"lower", bounds.lower}, {"upper", bounds.upper}, {"weights", bounds.weights}};
}

json to_json(const CertificateReport& report) {
  json doc = {{"verdict", to_string(report.verdict)},
              {"reference_label", report.reference_label},
              {"max_tolerance", report.max_tolerance},
              {"instrumentation", to_json(report.stats)}};
  if (report.flip_witness) {
    const Vector& w = *report.flip_witness;
    doc["flip_witness"] = std::vector<double>(w.data(), w.data() + w.size());
  } else {
    doc["flip_witness"] = nullptr;
  }
  if (report.quant) doc["quant"] = to_json(*report.quant);
  return doc;
}

}  // namespace latcert
