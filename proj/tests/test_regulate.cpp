// SPDX-License-Identifier: Apache-2.0
#include "latcert/errors.hpp"
#include "latcert/regulate.hpp"
#include "latcert/segprop.hpp"
#include "latcert/synthetic.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace latcert;
using latcert::testing::random_matrix;
using latcert::testing::random_network;
using latcert::testing::random_vector;

namespace {

Network scaled_identity(std::size_t d, double s) {
  return Network("s", d,
                 {Layer::affine(s * Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)),
                                Vector::Zero(static_cast<Eigen::Index>(d)))});
}

TrainingSet small_synthetic(std::size_t n, Canvas& canvas) {
  canvas.height = 12;
  canvas.width = 12;
  canvas.side = 5.0;
  const LatentCode code({{Factor::tx, -2.0, 2.0}, {Factor::ty, -2.0, 2.0}, {Factor::theta, -30.0, 30.0}});
  return gen_dataset(n, code, 1, canvas).training_set();
}

}  // namespace

TEST_CASE("triplets interpolate their endpoints") {
  Rng rng(1);
  const LatentPrior prior;
  for (int i = 0; i < 200; ++i) {
    const TripletSample s = TripletSample::draw(prior, 4, rng);
    CHECK(s.lambda >= 0.0);
    CHECK(s.lambda <= 1.0);
    CHECK((s.z0.array().abs() <= 1.0).all());
    CHECK(s.zt() == s.z0 + s.lambda * (s.zT - s.z0));
  }
  LatentPrior normal{LatentPrior::Kind::normal, 2.0};
  double sum_sq = 0.0;
  for (int i = 0; i < 2000; ++i) sum_sq += normal.sample(1, rng).squaredNorm();
  CHECK(std::sqrt(sum_sq / 2000) == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("continuity loss vanishes at the endpoints and on affine maps") {
  Rng rng(2);
  const Network g = random_network(rng, {3, 8, 8, 5});
  Matrix w = random_matrix(rng, 5, 3);
  const Network affine("a", 3, {Layer::affine(w, random_vector(rng, 5))});
  for (int i = 0; i < 100; ++i) {
    TripletSample s{random_vector(rng, 3), random_vector(rng, 3), 0.0};
    CHECK(continuity_loss(g, s) == doctest::Approx(0.0));
    s.lambda = 1.0;
    CHECK(continuity_loss(g, s) <= 1e-12);
    s.lambda = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    CHECK(continuity_loss(g, s) >= 0.0);
    CHECK(continuity_loss(affine, s) <= 1e-12 * (1.0 + forward(affine, s.z0).norm()));
  }
}

TEST_CASE("the literal sign does not vanish at lambda = 0") {
  Rng rng(3);
  const Network g = random_network(rng, {2, 4, 3});
  const TripletSample s{random_vector(rng, 2), random_vector(rng, 2), 0.0};
  const double expected = 2.0 * forward(g, s.z0).norm();
  CHECK(continuity_loss(g, s, ContinuitySign::literal) == doctest::Approx(expected));
}

TEST_CASE("conditioned continuity loss") {
  Rng rng(4);
  const Network affine("a", 4, {Layer::affine(random_matrix(rng, 3, 4), random_vector(rng, 3))});
  const Vector a = random_vector(rng, 2);
  const Vector d0 = random_vector(rng, 2), dT = random_vector(rng, 2);
  CHECK(conditioned_continuity_loss(affine, a, d0, dT, 0.3) <= 1e-12);
  const Network g = random_network(rng, {4, 8, 3});
  CHECK(conditioned_continuity_loss(g, a, d0, dT, 0.0) <= 1e-12);
  CHECK(conditioned_continuity_loss(g, a, d0, dT, 1.0) <= 1e-12);
  CHECK_THROWS_AS(conditioned_continuity_loss(g, a, d0, dT, 1.5), RangeError);
}

TEST_CASE("zero epochs return the initial generator") {
  Rng rng(5);
  const Network g0 = random_network(rng, {2, 6, 4});
  TrainingSet data{random_matrix(rng, 2, 10), random_matrix(rng, 4, 10)};
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainResult r = regulate_train(g0, data, cfg);
  REQUIRE(r.network.size() == g0.size());
  for (std::size_t k = 0; k < g0.size(); ++k) {
    CHECK(r.network.layers()[k].weights == g0.layers()[k].weights);
    CHECK(r.network.layers()[k].bias == g0.layers()[k].bias);
  }
  CHECK(r.history.empty());
}

TEST_CASE("training config validation") {
  Rng rng(6);
  const Network g0 = random_network(rng, {2, 6, 4});
  TrainingSet data{random_matrix(rng, 2, 10), random_matrix(rng, 4, 10)};
  TrainConfig bad;
  bad.lr = 0.0;
  CHECK_THROWS_AS(regulate_train(g0, data, bad), RangeError);
  bad = {};
  bad.batch_size = 0;
  CHECK_THROWS_AS(regulate_train(g0, data, bad), RangeError);
  bad = {};
  bad.loss_weight = -1.0;
  CHECK_THROWS_AS(regulate_train(g0, data, bad), RangeError);
  TrainingSet wrong{random_matrix(rng, 3, 10), random_matrix(rng, 4, 10)};
  CHECK_THROWS_AS(regulate_train(g0, wrong, TrainConfig{}), ShapeError);
  TrainConfig huge;
  huge.lr = 1e12;
  huge.epochs = 5;
  CHECK_THROWS_AS(regulate_train(g0, data, huge), TrainingError);
}

TEST_CASE("training is bitwise reproducible and lowers the reconstruction loss") {
  Rng rng(7);
  const Network g0 = random_network(rng, {3, 16, 5});
  const Matrix z = random_matrix(rng, 3, 200);
  Matrix w = random_matrix(rng, 5, 3);
  TrainingSet data{z, (w * z).array().tanh().matrix()};
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 9;
  cfg.loss_weight = 0.1;
  const TrainResult a = regulate_train(g0, data, cfg);
  const TrainResult b = regulate_train(g0, data, cfg);
  for (std::size_t k = 0; k < g0.size(); ++k) CHECK(a.network.layers()[k].weights == b.network.layers()[k].weights);
  REQUIRE(a.history.size() == 20);
  CHECK(a.history.back().reconstruction < a.history.front().reconstruction);
  CHECK(reconstruction_loss(a.network, data) < reconstruction_loss(g0, data));
}

TEST_CASE("regulation lowers the continuity loss on synthetic squares") {
  Canvas canvas;
  const TrainingSet data = small_synthetic(512, canvas);
  const Network g0 = make_mlp("G", {3, 32, canvas.pixels()}, 3, LayerKind::clamp01, 0.5);
  TrainConfig base;
  base.epochs = 15;
  base.lr = 0.2;
  base.seed = 4;
  TrainConfig regulated = base;
  regulated.loss_weight = 0.01;
  const TrainResult plain = regulate_train(g0, data, base);
  const TrainResult reg = regulate_train(g0, data, regulated);
  const double before = mean_continuity_loss(plain.network, {}, 1000, 77);
  const double after = mean_continuity_loss(reg.network, {}, 1000, 77);
  const double initial = mean_continuity_loss(g0, {}, 1000, 77);
  MESSAGE("continuity initial " << initial << " plain " << before << " regulated " << after);
  CHECK(after < initial);
  CHECK(reg.history.back().continuity < reg.history.front().continuity);
  CHECK(after < before);
  const double l1_plain = reconstruction_loss(plain.network, data);
  const double l1_reg = reconstruction_loss(reg.network, data);
  MESSAGE("reconstruction plain " << l1_plain << " regulated " << l1_reg);
  CHECK(l1_reg < reconstruction_loss(g0, data));
}

TEST_CASE("curve length examples") {
  const Network id = identity_network(3);
  const Vector z = Vector::Zero(3);
  const Vector z2 = Eigen::Vector3d(2, 0, 0);
  for (std::size_t n : {1, 7, 100}) CHECK(curve_length(id, z, z2, n) == doctest::Approx(2.0));
  const Network constant("c", 3, {Layer::affine(Matrix::Zero(2, 3), Vector::Ones(2))});
  CHECK(curve_length(constant, z, z2, 50) == 0.0);
  CHECK_THROWS_AS(curve_length(id, z, z2, 0), RangeError);
}

TEST_CASE("curve length against the exact chain") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Network g = random_network(rng, {3, 10, 10, 6});
    const Segment seg{random_vector(rng, 3), random_vector(rng, 3)};
    const SegmentChain chain = propagate_segment(g, seg).chain;
    const double exact = chain.polyline_length();
    const std::size_t n = 10000;
    // Chords of the chain at the same grid give the same sum.
    double chords = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      chords += (chain.at(static_cast<double>(i + 1) / n) - chain.at(static_cast<double>(i) / n)).norm();
    }
    const double sampled = curve_length(g, seg.start, seg.end, n);
    CHECK(sampled == doctest::Approx(chords).epsilon(1e-9));
    // Chords cut corners, and only the grid cells holding a kink do so.
    CHECK(sampled <= exact * (1.0 + 1e-12));
    CHECK(exact - sampled <= static_cast<double>(chain.pieces()) * 2.0 * exact / n);
    const double finer = curve_length(g, seg.start, seg.end, 4 * n);
    CHECK(exact - finer <= static_cast<double>(chain.pieces()) * 2.0 * exact / (4 * n));
  }
}

TEST_CASE("continuity constant examples") {
  CHECK(estimate_C(scaled_identity(3, 1.0), {}, 50, 1).C == doctest::Approx(1.0));
  CHECK(estimate_C(scaled_identity(3, 2.0), {}, 50, 1).C == doctest::Approx(2.0));
  CHECK(estimate_C(scaled_identity(3, 0.25), {}, 50, 1).C == doctest::Approx(4.0));
}

TEST_CASE("estimated C sandwiches held-out pairs") {
  Rng rng(9);
  const Network g = random_network(rng, {2, 12, 12, 6});
  const ContinuityEstimate est = estimate_C(g, {}, 300, 2);
  CHECK(est.C >= 1.0);
  CHECK(est.min_ratio <= est.q05);
  CHECK(est.q05 <= est.q50);
  CHECK(est.q50 <= est.q95);
  CHECK(est.q95 <= est.max_ratio);
  const LatentPrior prior;
  for (int i = 0; i < 200; ++i) {
    const Vector a = prior.sample(2, rng), b = prior.sample(2, rng);
    const double lz = (b - a).norm();
    const double lm = curve_length(g, a, b, 64);
    CHECK(lm <= 2.0 * est.C * lz);
    CHECK(lz / (2.0 * est.C) <= lm);
  }
}

TEST_CASE("config and history serialize") {
  TrainConfig c;
  c.epochs = 3;
  c.loss_weight = 0.25;
  c.seed = 42;
  c.prior.kind = LatentPrior::Kind::normal;
  c.sign = ContinuitySign::literal;
  c.triplets_per_batch = 4;
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(back.epochs == 3);
  CHECK(back.loss_weight == 0.25);
  CHECK(back.seed == 42);
  CHECK(back.prior.kind == LatentPrior::Kind::normal);
  CHECK(back.sign == ContinuitySign::literal);
  CHECK(back.triplets_per_batch == 4);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"sign": "sideways"})")), FormatError);
  const std::string csv = loss_history_csv({{0, 0.5, 0.25}, {1, 0.4, 0.2}});
  CHECK(csv.rfind("epoch,L1,L2\n", 0) == 0);
  CHECK(csv.find("1,0.4,0.2") != std::string::npos);
  CHECK(to_json(ContinuityEstimate{}).contains("C"));
}
