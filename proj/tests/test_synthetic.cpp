// SPDX-License-Identifier: Apache-2.0
#include "latcert/errors.hpp"
#include "latcert/synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace latcert;

namespace {

double angle_gap(double a, double b) {
  double d = std::fmod(std::abs(a - b), 90.0);
  return std::min(d, 90.0 - d);
}

GeomParams rotated(double theta) {
  GeomParams p;
  p.theta = theta;
  return p;
}

std::array<double, 2> centroid(const Vector& img, const Canvas& canvas) {
  double m = 0.0, x = 0.0, y = 0.0;
  for (int r = 0; r < canvas.height; ++r) {
    for (int c = 0; c < canvas.width; ++c) {
      const double v = img[r * canvas.width + c];
      m += v;
      x += v * c;
      y += v * r;
    }
  }
  return {x / m, y / m};
}

DirectionBasis axis_basis(std::size_t d) {
  DirectionBasis b;
  b.V = Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  b.singular_values = Vector::Ones(static_cast<Eigen::Index>(d));
  b.rank = d;
  return b;
}

}  // namespace

TEST_CASE("affine_map examples") {
  const auto q = affine_map(rotated(90.0), 1.0, 0.0);
  CHECK(q[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(1.0));
  const auto id = affine_map(GeomParams{}, 0.3, -2.0);
  CHECK(id[0] == 0.3);
  CHECK(id[1] == -2.0);
  for (double i : {-3.0, 0.5, 2.0}) {
    for (double j : {-1.0, 4.0}) {
      const auto once = affine_map(rotated(90.0), i, j);
      const auto twice = affine_map(rotated(90.0), once[0], once[1]);
      const auto half_turn = affine_map(rotated(180.0), i, j);
      CHECK(std::abs(twice[0] - half_turn[0]) <= 1e-12);
      CHECK(std::abs(twice[1] - half_turn[1]) <= 1e-12);
    }
  }
  GeomParams order;
  order.sx = order.sy = 2.0;
  order.shx = 0.5;
  order.tx = 1.0;
  // Scale first, then shear: (1, 1) -> (2, 2) -> (3, 2), then shift.
  const auto o = affine_map(order, 1.0, 1.0);
  CHECK(o[0] == doctest::Approx(4.0));
  CHECK(o[1] == doctest::Approx(2.0));
}

TEST_CASE("render examples") {
  const Canvas canvas;
  const Vector img = render(GeomParams{}, canvas);
  CHECK(img.size() == 32 * 32);
  CHECK(img.minCoeff() >= 0.0);
  CHECK(img.maxCoeff() <= 1.0);
  const auto c = centroid(img, canvas);
  CHECK(std::abs(c[0] - 15.5) <= 0.5);
  CHECK(std::abs(c[1] - 15.5) <= 0.5);
  CHECK(render(GeomParams{}, canvas) == img);

  GeomParams big;
  big.sx = big.sy = 2.0;
  const double side1 = min_enclosing_rect(img, canvas).size();
  const double side2 = min_enclosing_rect(render(big, canvas), canvas).size();
  CHECK(std::abs(side2 - 2.0 * side1) <= 1.0);

  const RectMeasure r45 = min_enclosing_rect(render(rotated(45.0), canvas), canvas);
  CHECK(angle_gap(r45.angle, 45.0) <= 2.0);

  GeomParams gone;
  gone.tx = 100.0;
  CHECK_THROWS_AS(render(gone, canvas), OutOfFrameError);
  GeomParams bad;
  bad.sx = 0.0;
  CHECK_THROWS_AS(render(bad, canvas), DomainError);
  CHECK_THROWS_AS(render(GeomParams{}, Canvas{4, 4, 2.0}), ShapeError);
}

TEST_CASE("min_enclosing_rect examples") {
  const Canvas canvas;
  const RectMeasure id = min_enclosing_rect(render(GeomParams{}, canvas), canvas);
  CHECK(std::abs(id.angle) <= 2.0);
  CHECK(id.width == doctest::Approx(id.height).epsilon(0.02));
  CHECK(id.width >= -1e-12);
  CHECK(id.angle > -90.0);
  CHECK(id.angle <= 90.0);

  GeomParams shifted;
  shifted.tx = 4.0;
  const RectMeasure s = min_enclosing_rect(render(shifted, canvas), canvas);
  CHECK(std::abs(s.cx - id.cx - 4.0) <= 0.5);
  CHECK(std::abs(s.cy - id.cy) <= 0.5);
  CHECK(std::abs(s.size() - id.size()) <= 1.0);

  const RectMeasure r30 = min_enclosing_rect(render(rotated(30.0), canvas), canvas);
  CHECK(std::abs(r30.angle - 30.0) <= 2.0);

  CHECK_THROWS_AS(min_enclosing_rect(Vector::Zero(32 * 32), canvas), EmptyObjectError);
  CHECK_THROWS_AS(min_enclosing_rect(Vector::Zero(10), canvas), ShapeError);
}

TEST_CASE("rectangle angles follow the rotation") {
  const Canvas canvas;
  for (double theta = -60.0; theta <= 60.0; theta += 2.5) {
    const RectMeasure r = min_enclosing_rect(render(rotated(theta), canvas), canvas);
    CHECK(angle_gap(r.angle, theta) <= 2.0);
  }
}

TEST_CASE("measurements track the rendered parameters") {
  const Canvas canvas;
  const LatentCode code = LatentCode::standard();
  const Observation ref = observe(render(GeomParams{}, canvas), canvas);
  const Dataset ds = gen_dataset(200, code, 3, canvas);
  for (std::size_t k = 0; k < ds.size(); ++k) {
    const GeomParams& p = ds.params[k];
    const Observation o = observe(ds.images.col(static_cast<Eigen::Index>(k)), canvas);
    CHECK(std::abs(o.rect.cx - ref.rect.cx - p.tx) <= 1.0);
    CHECK(std::abs(o.rect.cy - ref.rect.cy - p.ty) <= 1.0);
  }
  // Without shear the rectangle also recovers angle and size.
  const LatentCode unsheared({{Factor::tx, -6.0, 6.0}, {Factor::ty, -6.0, 6.0},
                              {Factor::theta, -30.0, 30.0}, {Factor::scale, 0.8, 1.3}});
  const Dataset plain = gen_dataset(200, unsheared, 4, canvas);
  for (std::size_t k = 0; k < plain.size(); ++k) {
    const GeomParams& p = plain.params[k];
    const Observation o = observe(plain.images.col(static_cast<Eigen::Index>(k)), canvas);
    CHECK(angle_gap(o.rect.angle, p.theta) <= 3.0);
    CHECK(std::abs(o.rect.size() / ref.rect.size() - p.sx) <= 0.05 * p.sx);
  }
  // Shear alone: offset at half-height is shx * side / 2.
  for (double shx : {-0.6, -0.2, 0.3, 0.7}) {
    GeomParams p;
    p.shx = shx;
    const Observation o = observe(render(p, canvas), canvas);
    CHECK(std::abs(o.shear - shx * 0.5 * canvas.side) <= 1.0);
  }
  for (double theta : {-25.0, 10.0, 30.0}) {
    for (double s : {0.8, 1.2}) {
      GeomParams p = rotated(theta);
      p.sx = p.sy = s;
      CHECK(std::abs(observe(render(p, canvas), canvas).shear) <= 1.0);
    }
  }
}

TEST_CASE("gen_dataset examples") {
  const Canvas canvas;
  const LatentCode point({{Factor::tx, 2.0, 2.0}, {Factor::theta, 10.0, 10.0}});
  const Dataset one = gen_dataset(1, point, 5, canvas);
  GeomParams p;
  p.tx = 2.0;
  p.theta = 10.0;
  CHECK(one.images.col(0) == render(p, canvas));

  const Dataset a = gen_dataset(50, LatentCode::standard(), 9, canvas);
  const Dataset b = gen_dataset(50, LatentCode::standard(), 9, canvas);
  CHECK(a.images == b.images);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(in_frame(a.params[k], canvas));

  const LatentCode rot({{Factor::theta, -30.0, 30.0}});
  const Dataset r = gen_dataset(100, rot, 11, canvas);
  for (std::size_t k = 0; k < r.size(); ++k) {
    const double angle = min_enclosing_rect(r.images.col(static_cast<Eigen::Index>(k)), canvas).angle;
    CHECK(std::abs(angle) <= 32.0);
    CHECK(std::abs(angle - r.params[k].theta) <= 2.0);
  }

  const LatentCode outside({{Factor::tx, 40.0, 50.0}});
  CHECK_THROWS_AS(gen_dataset(1, outside, 1, canvas, 10), OutOfFrameError);
  CHECK_THROWS_AS(gen_dataset(0, rot, 1, canvas), RangeError);
}

TEST_CASE("latent codes round trip") {
  const LatentCode code = LatentCode::standard();
  CHECK(code.dim() == 5);
  CHECK(code.decode(Vector::Zero(5)).sx == doctest::Approx(1.05));
  CHECK(code.decode(Vector::Ones(5)).tx == doctest::Approx(6.0));
  const Vector z = (Vector(5) << 0.1, -0.5, 0.9, -1.0, 0.3).finished();
  CHECK((code.encode(code.decode(z)) - z).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(LatentCode({}), DomainError);
  CHECK_THROWS_AS(LatentCode({{Factor::tx, 1.0, 0.0}}), DomainError);
  CHECK_THROWS_AS(LatentCode({{Factor::tx, 0.0, 1.0}, {Factor::tx, 0.0, 1.0}}), DomainError);
  CHECK_THROWS_AS(code.decode(Vector::Zero(2)), ShapeError);
}

TEST_CASE("datasets save and load") {
  const auto dir = std::filesystem::temp_directory_path() / "latcert_dataset";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const Dataset ds = gen_dataset(8, LatentCode::standard(), 2);
  save_dataset(ds, (dir / "squares").string());
  CHECK(std::filesystem::file_size(dir / "squares.f32") == 8 * 32 * 32 * 4);
  const Dataset back = load_dataset((dir / "squares.json").string());
  CHECK(back.size() == 8);
  CHECK(back.canvas.side == ds.canvas.side);
  CHECK(back.factors.size() == 5);
  CHECK((back.images - ds.images).cwiseAbs().maxCoeff() <= 1e-7);
  CHECK(back.params[3].theta == ds.params[3].theta);
  std::filesystem::resize_file(dir / "squares.f32", 100);
  CHECK_THROWS_AS(load_dataset((dir / "squares.json").string()), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("property changes and rank correlation") {
  Observation a, b;
  a.rect = {10, 10, 12, 12, 44.0};
  b.rect = {13, 14, 12, 12, -44.0};
  CHECK(property_change(Property::translation, a, b) == doctest::Approx(5.0));
  CHECK(property_change(Property::rotation, a, b) == doctest::Approx(2.0));
  b.rect.width = b.rect.height = 15.0;
  CHECK(property_change(Property::scaling, a, b) == doctest::Approx(0.25));
  b.shear = 2.5;
  CHECK(property_change(Property::shearing, a, b) == doctest::Approx(2.5));

  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 1, 0, -5}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 3}, {5, 5, 5}) == 0.0);
  CHECK(spearman({1, 2, 2, 3}, {1, 2, 2, 3}) == doctest::Approx(1.0));
}

TEST_CASE("checkable cells") {
  CHECK_FALSE(checkable(Property::rotation, Property::rotation));
  CHECK_FALSE(checkable(Property::shearing, Property::scaling));
  CHECK_FALSE(checkable(Property::rotation, Property::shearing));
  CHECK(checkable(Property::translation, Property::shearing));
  CHECK(checkable(Property::shearing, Property::translation));
  CHECK(checkable(Property::scaling, Property::rotation));
}

TEST_CASE("the exact generator passes the independence protocol") {
  const Canvas canvas;
  const LatentCode code = LatentCode::standard();
  const IndependenceReport rep = check_independence(exact_generator(code, canvas), axis_basis(5), canvas, {});
  REQUIRE(rep.sweeps.size() == 5);
  CHECK(rep.sweeps[0].label == Property::translation);
  CHECK(rep.sweeps[1].label == Property::translation);
  CHECK(rep.sweeps[2].label == Property::rotation);
  CHECK(rep.sweeps[3].label == Property::scaling);
  CHECK(rep.sweeps[4].label == Property::shearing);
  CHECK(rep.all_pass());
  CHECK(rep.cells[3][1] == CellStatus::not_applicable);
  const std::string csv = independence_csv(rep);
  CHECK(csv.rfind("mutated,Translation,Rotation,Scaling,Shearing\n", 0) == 0);
  CHECK(csv.find("fail") == std::string::npos);
}

TEST_CASE("a mislabeled direction fails the independence protocol") {
  const Canvas canvas;
  const LatentCode code = LatentCode::standard();
  std::vector<std::optional<Property>> labels{Property::translation, Property::translation,
                                              Property::translation, Property::scaling, Property::shearing};
  const IndependenceReport rep =
      check_independence(exact_generator(code, canvas), axis_basis(5), canvas, {}, labels);
  CHECK(rep.cells[0][1] == CellStatus::fail);
  CHECK_FALSE(rep.all_pass());

  labels.pop_back();
  CHECK_THROWS_AS(check_independence(exact_generator(code, canvas), axis_basis(5), canvas, {}, labels),
                  ProtocolError);
  labels.push_back(std::nullopt);
  CHECK_THROWS_AS(check_independence(exact_generator(code, canvas), axis_basis(5), canvas, {}, labels),
                  ProtocolError);
}

TEST_CASE("zero-length sweeps pass trivially") {
  const Canvas canvas;
  const LatentCode code = LatentCode::standard();
  IndependenceConfig cfg;
  cfg.delta_max = 0.0;
  const std::vector<std::optional<Property>> labels{Property::translation, Property::rotation,
                                                    Property::scaling, Property::shearing,
                                                    Property::translation};
  const IndependenceReport rep =
      check_independence(exact_generator(code, canvas), axis_basis(5), canvas, cfg, labels);
  CHECK(rep.all_pass());
}

TEST_CASE("the exact generator passes the continuity protocol") {
  const Canvas canvas;
  const LatentCode code = LatentCode::standard();
  ContinuityConfig cfg;
  cfg.pairs = 20;
  cfg.points_per_pair = 20;
  cfg.seed = 4;
  const ContinuityResult r = check_continuity(exact_generator(code, canvas), code, canvas, cfg);
  for (std::size_t p = 0; p < 4; ++p) {
    CHECK(r.checks[p] == 400);
    CHECK(r.pass_ratio[p] == 1.0);
  }
  CHECK(r.overall() == 1.0);
  const std::string csv = continuity_csv({{"delta1", r}});
  CHECK(csv == "delta,Translation,Rotation,Scaling,Shearing\ndelta1,1,1,1,1\n");
}

TEST_CASE("a generator that ignores its input fails the continuity protocol") {
  const Canvas canvas;
  const LatentCode code = LatentCode::standard();
  GeomParams far;
  far.tx = -10.0;
  far.ty = -10.0;
  const Vector frozen = render(far, canvas);
  const Generator stuck = [&](const Matrix& z) {
    Matrix out(frozen.size(), z.cols());
    out.colwise() = frozen;
    return out;
  };
  ContinuityConfig cfg;
  cfg.pairs = 10;
  cfg.points_per_pair = 10;
  const ContinuityResult r = check_continuity(stuck, code, canvas, cfg, {Property::translation});
  CHECK(r.pass_ratio[0] < 0.5);
  CHECK(r.checks[1] == 0);
  const LatentCode partial({{Factor::tx, -6.0, 6.0}});
  CHECK_THROWS_AS(check_continuity(stuck, partial, canvas, cfg, {Property::rotation}), ProtocolError);
}

TEST_CASE("geometry serializes") {
  GeomParams p;
  p.tx = 1.5;
  p.theta = -20.0;
  p.shx = 0.25;
  const GeomParams back = geom_from_json(to_json(p));
  CHECK(back.tx == 1.5);
  CHECK(back.theta == -20.0);
  CHECK(back.shx == 0.25);
  CHECK(to_json(RectMeasure{1, 2, 3, 4, 5}).at("angle") == 5.0);
}

TEST_CASE("horizontal shear carries half a rotation in the exact Jacobian") {
  // u = (y, 0) splits into the strain (y, x) / 2 and the rotation (y, -x) / 2;
  // on a square the strain part is orthogonal to rotation.
  const Canvas canvas;
  const LatentCode code = LatentCode::standard();
  const Generator g = exact_generator(code, canvas);
  const double h = 1e-4;
  Matrix jac(canvas.pixels(), 5);
  for (Eigen::Index i = 0; i < 5; ++i) {
    Matrix plus = Matrix::Zero(5, 1), minus = Matrix::Zero(5, 1);
    plus(i, 0) = h;
    minus(i, 0) = -h;
    jac.col(i) = (g(plus) - g(minus)).col(0) / (2.0 * h);
  }
  const Vector rot = jac.col(2), shear = jac.col(4);
  const double k_theta = 30.0 * std::numbers::pi / 180.0;  // rad per latent unit
  const double k_shear = 0.9;
  const double cosine = rot.dot(shear) / (rot.norm() * shear.norm());
  CHECK(cosine < -0.5);
  const Vector strain = shear + 0.5 * (k_shear / k_theta) * rot;
  CHECK(std::abs(strain.dot(rot)) / (strain.norm() * rot.norm()) < 0.02);
  for (Eigen::Index i : {0, 1, 3}) {
    CHECK(std::abs(jac.col(i).dot(rot)) / (jac.col(i).norm() * rot.norm()) < 1e-6);
    CHECK(std::abs(jac.col(i).dot(shear)) / (jac.col(i).norm() * shear.norm()) < 1e-6);
  }
}
