// SPDX-License-Identifier: Apache-2.0
#include "latcert/errors.hpp"
#include "latcert/segprop.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace latcert;
using namespace latcert::testing;

namespace {

SegmentChain chain2(const std::vector<double>& t, std::initializer_list<std::initializer_list<double>> cols) {
  Matrix v(static_cast<Eigen::Index>(cols.begin()->size()), static_cast<Eigen::Index>(cols.size()));
  Eigen::Index c = 0;
  for (const auto& col : cols) {
    Eigen::Index r = 0;
    for (double x : col) v(r++, c) = x;
    ++c;
  }
  return SegmentChain(t, v);
}

Segment random_segment(Rng& rng, Eigen::Index d, double scale = 2.0) {
  return {random_vector(rng, d, scale), random_vector(rng, d, scale)};
}

}  // namespace

TEST_CASE("chain invariants are enforced") {
  CHECK_THROWS_AS(SegmentChain({0.0}, Matrix::Zero(1, 1)), ShapeError);
  CHECK_THROWS_AS(SegmentChain({0.1, 1.0}, Matrix::Zero(1, 2)), DomainError);
  CHECK_THROWS_AS(SegmentChain({0.0, 0.5, 0.5, 1.0}, Matrix::Zero(1, 4)), DomainError);
  CHECK_THROWS_AS(SegmentChain({0.0, 1.0}, Matrix::Zero(1, 3)), ShapeError);
  const SegmentChain ok = chain2({0.0, 0.5, 1.0}, {{0.0}, {1.0}, {3.0}});
  CHECK(ok.pieces() == 2);
  CHECK(ok.piece_at(0.25) == 0);
  CHECK(ok.piece_at(1.0) == 1);
  CHECK(ok.at(0.75)[0] == doctest::Approx(2.0));
  CHECK(ok.polyline_length() == doctest::Approx(3.0));
}

TEST_CASE("propagate_affine examples") {
  const SegmentChain c = chain2({0.0, 1.0}, {{1.0}, {3.0}});
  const SegmentChain same = propagate_affine(c, Matrix::Identity(1, 1), Vector::Zero(1));
  CHECK(same.vertices() == c.vertices());
  const SegmentChain out = propagate_affine(c, Matrix::Constant(1, 1, 2.0), Vector::Constant(1, 1.0));
  CHECK(out.vertex(0)[0] == 3.0);
  CHECK(out.vertex(1)[0] == 7.0);
  CHECK_THROWS_AS(propagate_affine(c, Matrix::Identity(2, 2), Vector::Zero(2)), ShapeError);

  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Network net = random_network(rng, {3, 6, 4});
    const SegmentChain chain = propagate_segment(net, random_segment(rng, 3)).chain;
    const SegmentChain mapped = propagate_affine(chain, random_matrix(rng, 2, 4), random_vector(rng, 2));
    CHECK(mapped.breakpoints() == chain.breakpoints());
    CHECK(mapped.t() == chain.t());
  }
}

TEST_CASE("propagate_relu examples") {
  const SegmentChain c = chain2({0.0, 1.0}, {{-1.0, 2.0}, {1.0, 2.0}});
  const SegmentChain out = propagate_relu(c);
  REQUIRE(out.breakpoints() == 3);
  CHECK(out.t()[1] == doctest::Approx(0.5));
  CHECK(out.vertex(0) == Eigen::Vector2d(0.0, 2.0));
  CHECK(out.vertex(1) == Eigen::Vector2d(0.0, 2.0));
  CHECK(out.vertex(2) == Eigen::Vector2d(1.0, 2.0));

  const SegmentChain pos = chain2({0.0, 0.3, 1.0}, {{0.0, 1.0}, {2.0, 1.0}, {0.5, 3.0}});
  const SegmentChain unchanged = propagate_relu(pos);
  CHECK(unchanged.t() == pos.t());
  CHECK(unchanged.vertices() == pos.vertices());
}

TEST_CASE("relu split of a piece with three interior crossings") {
  // Roots at t = 0.2, 0.5, 0.8; the fourth coordinate stays positive.
  Matrix v(4, 2);
  v.col(0) << -0.2, -0.5, 0.8, 1.0;
  v.col(1) << 0.8, 0.5, -0.2, 2.0;
  const SegmentChain c({0.0, 1.0}, v);
  const SegmentChain out = propagate_relu(c);
  CHECK(out.pieces() == 4);
  for (int k = 0; k <= 1000; ++k) {
    const double t = k / 1000.0;
    const Vector oracle = c.at(t).cwiseMax(0.0);
    CHECK((out.at(t) - oracle).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("propagate_segment examples") {
  const Segment seg{Eigen::Vector3d(1, -2, 0.5), Eigen::Vector3d(-1, 4, 2)};
  const Propagation id = propagate_segment(identity_network(3), seg);
  CHECK(id.chain.pieces() == 1);
  CHECK(id.chain.vertex(0) == seg.start);
  CHECK(id.chain.vertex(1) == seg.end);

  const Network net("n", 2, {Layer::affine(Matrix::Identity(2, 2), Vector::Zero(2)), Layer::relu()});
  const Propagation p =
      propagate_segment(net, {Eigen::Vector2d(-1.0, 2.0), Eigen::Vector2d(1.0, 2.0)});
  CHECK(p.chain.pieces() == 2);
  CHECK(p.chain.t()[1] == doctest::Approx(0.5));
  CHECK(p.stats.pieces_per_layer == std::vector<std::size_t>{1, 1, 2});
  CHECK_THROWS_AS(propagate_segment(net, {Vector::Zero(3), Vector::Zero(3)}), ShapeError);
}

TEST_CASE("sampled points lie on the chain and vertices are exact") {
  Rng rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = random_network(rng, {8, 12, 12, 5});
    const Segment seg = random_segment(rng, 8);
    const SegmentChain chain = propagate_segment(net, seg).chain;
    for (int k = 0; k < 1000; ++k) {
      const double t = u(rng);
      CHECK(relative_gap(chain.at(t), forward(net, seg.at(t))) <= 1e-6);
    }
    for (std::size_t i = 0; i < chain.breakpoints(); ++i) {
      CHECK(relative_gap(chain.vertex(i), forward(net, seg.at(chain.t()[i]))) <= 1e-9);
    }
    for (std::size_t i = 0; i < chain.pieces(); ++i) {
      const double mid = 0.5 * (chain.t()[i] + chain.t()[i + 1]);
      CHECK(relative_gap(chain.at(mid), forward(net, seg.at(mid))) <= 1e-9);
    }
  }
}

TEST_CASE("clamp layers propagate exactly") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net("c", 3,
                      {Layer::affine(random_matrix(rng, 6, 3, 2.0), random_vector(rng, 6)), Layer::clamp11(),
                       Layer::affine(random_matrix(rng, 4, 6), random_vector(rng, 4)), Layer::clamp01()});
    const Segment seg = random_segment(rng, 3);
    const SegmentChain chain = propagate_segment(net, seg).chain;
    for (int k = 0; k <= 500; ++k) {
      const double t = k / 500.0;
      CHECK(relative_gap(chain.at(t), forward(net, seg.at(t))) <= 1e-9);
    }
  }
}

TEST_CASE("relu layers grow pieces by at most width + 1") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = random_network(rng, {4, 10, 10, 10, 3}, true);
    const Propagation p = propagate_segment(net, random_segment(rng, 4, 3.0));
    for (std::size_t k = 0; k < net.size(); ++k) {
      const auto before = p.stats.pieces_per_layer[k];
      const auto after = p.stats.pieces_per_layer[k + 1];
      if (net.layers()[k].kind == LayerKind::relu) {
        CHECK(after <= before * (net.dim_before(k) + 1));
      } else {
        CHECK(after == before);
      }
    }
  }
}

TEST_CASE("propagate_box examples") {
  Rng rng(5);
  const Network net = random_network(rng, {3, 5, 2});
  const Vector x = random_vector(rng, 3);
  const Box out = propagate_box(net, Box::point(x));
  CHECK(relative_gap(out.lower, forward(net, x)) <= 1e-12);
  CHECK(relative_gap(out.upper, forward(net, x)) <= 1e-12);

  const Network relu("r", 1, {Layer::relu()});
  const Box r = propagate_box(relu, {Vector::Constant(1, -1.0), Vector::Constant(1, 1.0)});
  CHECK(r.lower[0] == 0.0);
  CHECK(r.upper[0] == 1.0);

  const Network c01("c", 1, {Layer::clamp01()});
  const Box c = propagate_box(c01, {Vector::Constant(1, 0.25), Vector::Constant(1, 0.5)});
  CHECK(c.lower[0] == doctest::Approx(0.5));
  CHECK(c.upper[0] == doctest::Approx(0.75));

  CHECK_THROWS_AS(propagate_box(net, Box::point(Vector::Zero(2))), ShapeError);
  CHECK_THROWS_AS(propagate_box(net, {Vector::Ones(3), Vector::Zero(3)}), DomainError);
}

TEST_CASE("chain hull sits inside the propagated box") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Network net("c", 4,
                      {Layer::affine(random_matrix(rng, 6, 4), random_vector(rng, 6)), Layer::relu(),
                       Layer::affine(random_matrix(rng, 5, 6), random_vector(rng, 5)), Layer::clamp11(),
                       Layer::affine(random_matrix(rng, 3, 5), random_vector(rng, 3))});
    const Segment seg = random_segment(rng, 4, 1.0);
    const SegmentChain chain = propagate_segment(net, seg).chain;
    const Box box = propagate_box(net, Box::hull(seg));
    for (std::size_t i = 0; i < chain.breakpoints(); ++i) CHECK(box.contains(chain.vertex(i), 1e-9));
  }
}

TEST_CASE("box propagation is monotone") {
  Rng rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Network net = random_network(rng, {3, 6, 6, 2});
    const Vector lo = random_vector(rng, 3);
    const Vector hi = lo + random_vector(rng, 3).cwiseAbs();
    Vector slo(3), shi(3);
    for (int i = 0; i < 3; ++i) {
      const double a = lo[i] + u(rng) * (hi[i] - lo[i]);
      const double b = lo[i] + u(rng) * (hi[i] - lo[i]);
      slo[i] = std::min(a, b);
      shi[i] = std::max(a, b);
    }
    const Box outer = propagate_box(net, {lo, hi});
    const Box inner = propagate_box(net, {slo, shi});
    CHECK(outer.contains(inner.lower, 1e-12));
    CHECK(outer.contains(inner.upper, 1e-12));
  }
}

TEST_CASE("chain and stats serialize") {
  const SegmentChain c = chain2({0.0, 0.25, 1.0}, {{1.0, 2.0}, {0.0, 1.0}, {3.0, -1.0}});
  const nlohmann::json doc = to_json(c);
  CHECK(doc.at("t").size() == 3);
  CHECK(doc.at("vertices").size() == 3);
  const SegmentChain back = chain_from_json(doc);
  CHECK(back.t() == c.t());
  CHECK(back.vertices() == c.vertices());
  CHECK_THROWS_AS(chain_from_json(nlohmann::json::parse(R"({"t": [0, 1], "vertices": [[1]]})")),
                  ShapeError);
  PropagationStats s;
  s.pieces_per_layer = {1, 3};
  s.wall_ms = 0.5;
  CHECK(to_json(s).at("pieces_per_layer") == nlohmann::json::array({1, 3}));
}
