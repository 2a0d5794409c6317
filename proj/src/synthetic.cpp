// SPDX-License-Identifier: Apache-2.0
#include "latcert/synthetic.hpp"

#include "float_file.hpp"
#include "latcert/errors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace latcert {

using nlohmann::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Affine2 {
  double a, b, c, d;  // [[a, b], [c, d]]
  double tx, ty;
};

Affine2 forward_matrix(const GeomParams& p) {
  // R * Sh * S
  const double cs = std::cos(p.theta * kDeg);
  const double sn = std::sin(p.theta * kDeg);
  const double m00 = p.sx, m01 = p.shx * p.sy;
  const double m10 = p.shy * p.sx, m11 = p.sy;
  return {cs * m00 - sn * m10, cs * m01 - sn * m11, sn * m00 + cs * m10, sn * m01 + cs * m11,
          p.tx, p.ty};
}

double wrap90(double deg) {
  double a = std::fmod(deg, 90.0);
  if (a > 45.0) a -= 90.0;
  if (a <= -45.0) a += 90.0;
  return a;
}

}  // namespace

void GeomParams::validate() const {
  for (double v : {tx, ty, theta, sx, sy, shx, shy}) {
    if (!std::isfinite(v)) throw DomainError("geometry: non-finite parameter");
  }
  if (!(sx > 0.0) || !(sy > 0.0)) throw DomainError("geometry: scale factors must be positive");
  if (std::abs(1.0 - shx * shy) < 1e-9) throw DomainError("geometry: singular shear");
}

double RectMeasure::size() const { return std::sqrt(width * height); }

std::array<double, 2> affine_map(const GeomParams& p, double i, double j) {
  const Affine2 m = forward_matrix(p);
  return {m.a * i + m.b * j + m.tx, m.c * i + m.d * j + m.ty};
}

void Canvas::validate() const {
  if (height < 8 || width < 8) throw ShapeError("canvas: images must be at least 8x8");
  if (!(side > 0.0)) throw DomainError("canvas: square side must be positive");
}

Vector render(const GeomParams& p, const Canvas& canvas) {
  p.validate();
  canvas.validate();
  const Affine2 m = forward_matrix(p);
  const double det = m.a * m.d - m.b * m.c;
  const double ia = m.d / det, ib = -m.b / det, ic = -m.c / det, id = m.a / det;
  const double cx0 = 0.5 * (canvas.width - 1);
  const double cy0 = 0.5 * (canvas.height - 1);
  const double half = 0.5 * canvas.side;
  auto seed = [&](long col, long row) {
    if (col < 0 || row < 0 || col >= canvas.width || row >= canvas.height) return 0.0;
    const double a = static_cast<double>(col) - cx0;
    const double b = static_cast<double>(row) - cy0;
    return (std::abs(a) < half && std::abs(b) < half) ? 1.0 : 0.0;
  };
  Vector img(static_cast<Eigen::Index>(canvas.pixels()));
  double mass = 0.0;
  for (int r = 0; r < canvas.height; ++r) {
    for (int c = 0; c < canvas.width; ++c) {
      const double i = c - cx0 - m.tx;
      const double j = r - cy0 - m.ty;
      const double u = ia * i + ib * j + cx0;
      const double v = ic * i + id * j + cy0;
      const double fu = std::floor(u);
      const double fv = std::floor(v);
      const double wu = u - fu;
      const double wv = v - fv;
      const auto c0 = static_cast<long>(fu);
      const auto r0 = static_cast<long>(fv);
      const double val = (1 - wu) * (1 - wv) * seed(c0, r0) + wu * (1 - wv) * seed(c0 + 1, r0) +
                         (1 - wu) * wv * seed(c0, r0 + 1) + wu * wv * seed(c0 + 1, r0 + 1);
      img[static_cast<Eigen::Index>(r) * canvas.width + c] = val;
      mass += val;
    }
  }
  if (mass <= 0.0) throw OutOfFrameError("render: the square lies outside the frame");
  return img;
}

bool in_frame(const GeomParams& p, const Canvas& canvas, double margin) {
  const double half = 0.5 * canvas.side;
  const double cx0 = 0.5 * (canvas.width - 1);
  const double cy0 = 0.5 * (canvas.height - 1);
  for (double si : {-1.0, 1.0}) {
    for (double sj : {-1.0, 1.0}) {
      const auto q = affine_map(p, si * half, sj * half);
      const double x = q[0] + cx0;
      const double y = q[1] + cy0;
      if (x < margin || y < margin || x > canvas.width - 1 - margin ||
          y > canvas.height - 1 - margin) {
        return false;
      }
    }
  }
  return true;
}

namespace {

struct Pt {
  double x, y;
};

double cross(const Pt& o, const Pt& a, const Pt& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

std::vector<Pt> convex_hull(std::vector<Pt> pts) {
  std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Pt& a, const Pt& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Pt> hull(2 * pts.size());
  std::size_t k = 0;
  for (const Pt& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace

RectMeasure min_enclosing_rect(const Vector& image, const Canvas& canvas, double threshold) {
  if (static_cast<std::size_t>(image.size()) != canvas.pixels()) {
    throw ShapeError("min_enclosing_rect: image does not match the canvas");
  }
  const int w = canvas.width;
  auto at = [&](int r, int c) { return image[static_cast<Eigen::Index>(r) * w + c]; };
  // Foreground pixel centers plus sub-pixel threshold crossings between
  // 4-neighbours.
  std::vector<Pt> pts;
  for (int r = 0; r < canvas.height; ++r) {
    for (int c = 0; c < w; ++c) {
      const double v = at(r, c);
      const bool fg = v >= threshold;
      if (fg) pts.push_back({static_cast<double>(c), static_cast<double>(r)});
      if (c + 1 < w) {
        const double v2 = at(r, c + 1);
        if (fg != (v2 >= threshold)) pts.push_back({c + (threshold - v) / (v2 - v), static_cast<double>(r)});
      }
      if (r + 1 < canvas.height) {
        const double v2 = at(r + 1, c);
        if (fg != (v2 >= threshold)) pts.push_back({static_cast<double>(c), r + (threshold - v) / (v2 - v)});
      }
    }
  }
  if (pts.empty()) throw EmptyObjectError("min_enclosing_rect: no pixel above threshold");
  const std::vector<Pt> hull = convex_hull(pts);
  RectMeasure best;
  if (hull.size() == 1) {
    best.cx = hull[0].x;
    best.cy = hull[0].y;
    return best;
  }
  double best_area = std::numeric_limits<double>::infinity();
  // The minimum-area rectangle has a side collinear with a hull edge.
  for (std::size_t e = 0; e < hull.size(); ++e) {
    const Pt& p = hull[e];
    const Pt& q = hull[(e + 1) % hull.size()];
    const double len = std::hypot(q.x - p.x, q.y - p.y);
    if (len == 0.0) continue;
    const double ux = (q.x - p.x) / len, uy = (q.y - p.y) / len;
    double umin = std::numeric_limits<double>::infinity(), umax = -umin;
    double nmin = umin, nmax = -umin;
    for (const Pt& h : hull) {
      const double pu = h.x * ux + h.y * uy;
      const double pn = -h.x * uy + h.y * ux;
      umin = std::min(umin, pu);
      umax = std::max(umax, pu);
      nmin = std::min(nmin, pn);
      nmax = std::max(nmax, pn);
    }
    const double area = (umax - umin) * (nmax - nmin);
    if (area < best_area - 1e-12) {
      best_area = area;
      const double cu = 0.5 * (umin + umax);
      const double cn = 0.5 * (nmin + nmax);
      best.cx = cu * ux - cn * uy;
      best.cy = cu * uy + cn * ux;
      best.width = umax - umin;
      best.height = nmax - nmin;
      best.angle = std::atan2(uy, ux) / kDeg;
    }
  }
  while (best.angle > 45.0) {
    best.angle -= 90.0;
    std::swap(best.width, best.height);
  }
  while (best.angle <= -45.0) {
    best.angle += 90.0;
    std::swap(best.width, best.height);
  }
  return best;
}

Observation observe(const Vector& image, const Canvas& canvas, double threshold) {
  Observation o;
  o.rect = min_enclosing_rect(image, canvas, threshold);
  double m = 0.0, mx = 0.0, my = 0.0;
  for (int r = 0; r < canvas.height; ++r) {
    for (int c = 0; c < canvas.width; ++c) {
      const double v = image[static_cast<Eigen::Index>(r) * canvas.width + c];
      const double wgt = std::clamp((v - threshold + 0.25) / 0.5, 0.0, 1.0);
      m += wgt;
      mx += wgt * c;
      my += wgt * r;
    }
  }
  if (m <= 0.0) return o;
  mx /= m;
  my /= m;
  double vy = 0.0, cxy = 0.0;
  for (int r = 0; r < canvas.height; ++r) {
    for (int c = 0; c < canvas.width; ++c) {
      const double v = image[static_cast<Eigen::Index>(r) * canvas.width + c];
      const double wgt = std::clamp((v - threshold + 0.25) / 0.5, 0.0, 1.0);
      vy += wgt * (r - my) * (r - my);
      cxy += wgt * (c - mx) * (r - my);
    }
  }
  vy /= m;
  cxy /= m;
  // Uniform mass on [-h, h] has variance h^2 / 3.
  if (vy > 0.0) o.shear = cxy / vy * std::sqrt(3.0 * vy);
  return o;
}

const char* to_string(Factor f) {
  switch (f) {
    case Factor::tx:
      return "tx";
    case Factor::ty:
      return "ty";
    case Factor::theta:
      return "theta";
    case Factor::scale:
      return "scale";
    case Factor::shear:
      return "shear";
  }
  return "?";
}

const char* to_string(Property p) {
  switch (p) {
    case Property::translation:
      return "Translation";
    case Property::rotation:
      return "Rotation";
    case Property::scaling:
      return "Scaling";
    case Property::shearing:
      return "Shearing";
  }
  return "?";
}

Property property_of(Factor f) {
  switch (f) {
    case Factor::tx:
    case Factor::ty:
      return Property::translation;
    case Factor::theta:
      return Property::rotation;
    case Factor::scale:
      return Property::scaling;
    case Factor::shear:
      return Property::shearing;
  }
  return Property::translation;
}

Factor factor_from_string(const std::string& s) {
  for (Factor f : {Factor::tx, Factor::ty, Factor::theta, Factor::scale, Factor::shear}) {
    if (s == to_string(f)) return f;
  }
  throw FormatError("unknown geometric factor '" + s + "'");
}

Property property_from_string(const std::string& s) {
  for (Property p : kAllProperties) {
    if (s == to_string(p)) return p;
  }
  throw FormatError("unknown geometric property '" + s + "'");
}

LatentCode::LatentCode(std::vector<FactorRange> factors) : factors_(std::move(factors)) {
  if (factors_.empty()) throw DomainError("latent code: no factors");
  for (std::size_t i = 0; i < factors_.size(); ++i) {
    const FactorRange& f = factors_[i];
    if (!std::isfinite(f.lo) || !std::isfinite(f.hi) || f.lo > f.hi) {
      throw DomainError(std::string("latent code: bad range for ") + to_string(f.factor));
    }
    if (f.factor == Factor::scale && !(f.lo > 0.0)) {
      throw DomainError("latent code: scale range must be positive");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (factors_[j].factor == f.factor) {
        throw DomainError(std::string("latent code: duplicate factor ") + to_string(f.factor));
      }
    }
  }
}

LatentCode LatentCode::standard() {
  return LatentCode({{Factor::tx, -6.0, 6.0},
                     {Factor::ty, -6.0, 6.0},
                     {Factor::theta, -30.0, 30.0},
                     {Factor::scale, 0.8, 1.3},
                     {Factor::shear, -0.9, 0.9}});
}

Vector LatentCode::encode(const GeomParams& p) const {
  Vector z(static_cast<Eigen::Index>(factors_.size()));
  for (std::size_t i = 0; i < factors_.size(); ++i) {
    const FactorRange& f = factors_[i];
    double v = 0.0;
    switch (f.factor) {
      case Factor::tx:
        v = p.tx;
        break;
      case Factor::ty:
        v = p.ty;
        break;
      case Factor::theta:
        v = p.theta;
        break;
      case Factor::scale:
        v = p.sx;
        break;
      case Factor::shear:
        v = p.shx;
        break;
    }
    z[static_cast<Eigen::Index>(i)] = f.hi > f.lo ? 2.0 * (v - f.lo) / (f.hi - f.lo) - 1.0 : 0.0;
  }
  return z;
}

GeomParams LatentCode::decode(const Vector& z) const {
  if (static_cast<std::size_t>(z.size()) != factors_.size()) {
    throw ShapeError("latent code: expected " + std::to_string(factors_.size()) + " values");
  }
  GeomParams p;
  for (std::size_t i = 0; i < factors_.size(); ++i) {
    const FactorRange& f = factors_[i];
    const double v = f.lo + 0.5 * (z[static_cast<Eigen::Index>(i)] + 1.0) * (f.hi - f.lo);
    switch (f.factor) {
      case Factor::tx:
        p.tx = v;
        break;
      case Factor::ty:
        p.ty = v;
        break;
      case Factor::theta:
        p.theta = v;
        break;
      case Factor::scale:
        p.sx = p.sy = v;
        break;
      case Factor::shear:
        p.shx = v;
        break;
    }
  }
  return p;
}

TrainingSet Dataset::training_set() const {
  const LatentCode code(factors);
  TrainingSet set;
  set.latents.resize(static_cast<Eigen::Index>(code.dim()), static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) {
    set.latents.col(static_cast<Eigen::Index>(i)) = code.encode(params[i]);
  }
  set.targets = images;
  return set;
}

Dataset gen_dataset(std::size_t n, const LatentCode& code, std::uint64_t seed,
                    const Canvas& canvas, int max_retries) {
  if (n < 1) throw RangeError("gen_dataset: need at least one sample");
  canvas.validate();
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Dataset ds;
  ds.canvas = canvas;
  ds.factors = code.factors();
  ds.params.reserve(n);
  ds.images.resize(static_cast<Eigen::Index>(canvas.pixels()), static_cast<Eigen::Index>(n));
  Vector z(static_cast<Eigen::Index>(code.dim()));
  for (std::size_t k = 0; k < n; ++k) {
    int attempt = 0;
    GeomParams p;
    do {
      if (attempt++ > max_retries) {
        throw OutOfFrameError("gen_dataset: ranges leave the frame too often");
      }
      for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = u(rng);
      p = code.decode(z);
    } while (!in_frame(p, canvas));
    ds.images.col(static_cast<Eigen::Index>(k)) = render(p, canvas);
    ds.params.push_back(p);
  }
  return ds;
}

json to_json(const GeomParams& p) {
  return {{"tx", p.tx}, {"ty", p.ty}, {"theta", p.theta}, {"sx", p.sx},
          {"sy", p.sy}, {"shx", p.shx}, {"shy", p.shy}};
}

GeomParams geom_from_json(const json& doc) {
  GeomParams p;
  try {
    p.tx = doc.value("tx", 0.0);
    p.ty = doc.value("ty", 0.0);
    p.theta = doc.value("theta", 0.0);
    p.sx = doc.value("sx", 1.0);
    p.sy = doc.value("sy", 1.0);
    p.shx = doc.value("shx", 0.0);
    p.shy = doc.value("shy", 0.0);
  } catch (const json::exception& e) {
    throw FormatError(std::string("geometry: ") + e.what());
  }
  p.validate();
  return p;
}

json to_json(const RectMeasure& r) {
  return {{"cx", r.cx}, {"cy", r.cy}, {"width", r.width}, {"height", r.height}, {"angle", r.angle}};
}

void save_dataset(const Dataset& ds, const std::string& stem) {
  const std::filesystem::path base(stem);
  const std::filesystem::path tensor = base.string() + ".f32";
  const std::filesystem::path manifest = base.string() + ".json";
  std::vector<double> flat(ds.images.data(), ds.images.data() + ds.images.size());
  detail::write_f32(tensor, flat);
  json doc;
  doc["format"] = "latcert-dataset";
  doc["version"] = 1;
  doc["height"] = ds.canvas.height;
  doc["width"] = ds.canvas.width;
  doc["side"] = ds.canvas.side;
  doc["count"] = ds.size();
  doc["tensor"] = tensor.filename().string();
  doc["factors"] = json::array();
  for (const FactorRange& f : ds.factors) {
    doc["factors"].push_back({{"factor", to_string(f.factor)}, {"lo", f.lo}, {"hi", f.hi}});
  }
  doc["params"] = json::array();
  for (const GeomParams& p : ds.params) doc["params"].push_back(to_json(p));
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw FormatError("dataset: cannot write " + manifest.string());
  out << doc.dump(1) << '\n';
}

Dataset load_dataset(const std::string& manifest_path) {
  const std::filesystem::path manifest(manifest_path);
  std::ifstream in(manifest);
  if (!in) throw FormatError("dataset: cannot open " + manifest_path);
  Dataset ds;
  try {
    const json doc = json::parse(in);
    ds.canvas.height = doc.at("height").get<int>();
    ds.canvas.width = doc.at("width").get<int>();
    ds.canvas.side = doc.at("side").get<double>();
    ds.canvas.validate();
    const auto count = doc.at("count").get<std::size_t>();
    for (const json& f : doc.at("factors")) {
      ds.factors.push_back({factor_from_string(f.at("factor").get<std::string>()),
                            f.at("lo").get<double>(), f.at("hi").get<double>()});
    }
    for (const json& p : doc.at("params")) ds.params.push_back(geom_from_json(p));
    if (ds.params.size() != count) throw FormatError("dataset: params do not match count");
    const std::vector<double> flat =
        detail::read_f32(manifest.parent_path() / doc.at("tensor").get<std::string>(),
                         count * ds.canvas.pixels());
    ds.images = Eigen::Map<const Matrix>(flat.data(), static_cast<Eigen::Index>(ds.canvas.pixels()),
                                         static_cast<Eigen::Index>(count));
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset: ") + e.what());
  }
  return ds;
}

double Tolerances::of(Property p) const {
  switch (p) {
    case Property::translation:
      return translation;
    case Property::rotation:
      return rotation;
    case Property::scaling:
      return scaling;
    case Property::shearing:
      return shearing;
  }
  return 0.0;
}

double property_change(Property p, const Observation& from, const Observation& to) {
  switch (p) {
    case Property::translation:
      return std::hypot(to.rect.cx - from.rect.cx, to.rect.cy - from.rect.cy);
    case Property::rotation:
      return std::abs(wrap90(to.rect.angle - from.rect.angle));
    case Property::scaling: {
      const double s = from.rect.size();
      return s > 0.0 ? std::abs(to.rect.size() / s - 1.0) : std::numeric_limits<double>::infinity();
    }
    case Property::shearing:
      return std::abs(to.shear - from.shear);
  }
  return 0.0;
}

namespace {

std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("spearman: series differ in length");
  if (x.size() < 2) return 0.0;
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

const char* to_string(CellStatus s) {
  switch (s) {
    case CellStatus::pass:
      return "pass";
    case CellStatus::fail:
      return "fail";
    case CellStatus::not_applicable:
      return "N/A";
    case CellStatus::untested:
      return "untested";
  }
  return "?";
}

bool checkable(Property mutated, Property observed) {
  if (mutated == observed) return false;
  if (observed == Property::shearing &&
      (mutated == Property::rotation || mutated == Property::scaling)) {
    return false;
  }
  if (mutated == Property::shearing &&
      (observed == Property::rotation || observed == Property::scaling)) {
    return false;
  }
  return true;
}

bool IndependenceReport::all_pass() const {
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      if (cells[r][c] == CellStatus::fail || cells[r][c] == CellStatus::untested) return false;
    }
  }
  return true;
}

namespace {

constexpr std::array<Property, 4> kProperties{Property::translation, Property::rotation,
                                              Property::scaling, Property::shearing};

std::optional<Observation> try_observe(const Vector& image, const Canvas& canvas, double thr) {
  try {
    return observe(image, canvas, thr);
  } catch (const EmptyObjectError&) {
    return std::nullopt;
  }
}

}  // namespace

Generator as_generator(const Network& g) {
  return [&g](const Matrix& z) { return forward_batch(g, z); };
}

Generator exact_generator(const LatentCode& code, const Canvas& canvas) {
  return [code, canvas](const Matrix& z) {
    Matrix out(static_cast<Eigen::Index>(canvas.pixels()), z.cols());
    for (Eigen::Index k = 0; k < z.cols(); ++k) out.col(k) = render(code.decode(z.col(k)), canvas);
    return out;
  };
}

IndependenceReport check_independence(const Network& g, const DirectionBasis& basis,
                                      const Canvas& canvas, const IndependenceConfig& config,
                                      const std::vector<std::optional<Property>>& labels) {
  if (g.output_dim() != canvas.pixels()) {
    throw ShapeError("check_independence: generator output does not match the canvas");
  }
  return check_independence(as_generator(g), basis, canvas, config, labels);
}

IndependenceReport check_independence(const Generator& g, const DirectionBasis& basis,
                                      const Canvas& canvas, const IndependenceConfig& config,
                                      const std::vector<std::optional<Property>>& labels) {
  if (config.steps < 2 || config.delta_max < 0.0) {
    throw RangeError("check_independence: need two or more steps and delta_max >= 0");
  }
  const auto d = static_cast<std::size_t>(basis.V.rows());
  const Vector z0 = config.reference.size() ? config.reference : Vector::Zero(static_cast<Eigen::Index>(d));
  if (static_cast<std::size_t>(z0.size()) != d) {
    throw ShapeError("check_independence: basis or reference does not match the latent space");
  }
  const std::size_t count = std::min(basis.rank, basis.dim());
  if (!labels.empty()) {
    if (labels.size() != count) {
      throw ProtocolError("check_independence: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(count) + " directions");
    }
    for (std::size_t i = 0; i < count; ++i) {
      if (!labels[i]) throw ProtocolError("check_independence: direction " + std::to_string(i) + " is unlabeled");
    }
  }
  const Tolerances& tol = config.tolerances;
  const Matrix base_image = g(z0);
  if (static_cast<std::size_t>(base_image.rows()) != canvas.pixels()) {
    throw ShapeError("check_independence: generator output does not match the canvas");
  }
  const auto base = try_observe(base_image.col(0), canvas, config.threshold);
  if (!base) throw EmptyObjectError("check_independence: the reference image is empty");

  IndependenceReport report;
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      report.cells[r][c] = checkable(kProperties[r], kProperties[c]) ? CellStatus::untested
                                                                      : CellStatus::not_applicable;
    }
  }
  const auto steps = static_cast<Eigen::Index>(config.steps);
  for (std::size_t k = 0; k < count; ++k) {
    DirectionSweep sweep;
    sweep.direction = basis.direction(k);
    Matrix points(static_cast<Eigen::Index>(d), steps);
    std::vector<double> deltas;
    for (Eigen::Index s = 0; s < steps; ++s) {
      const double delta = -config.delta_max + 2.0 * config.delta_max * static_cast<double>(s) /
                                                   static_cast<double>(steps - 1);
      deltas.push_back(delta);
      points.col(s) = z0 + delta * sweep.direction;
    }
    const Matrix images = g(points);
    std::array<std::vector<double>, 5> series;  // cx, cy, angle, size ratio, shear
    bool lost = false;
    for (Eigen::Index s = 0; s < steps; ++s) {
      const auto obs = try_observe(images.col(s), canvas, config.threshold);
      if (!obs) {
        lost = true;
        break;
      }
      for (std::size_t p = 0; p < 4; ++p) {
        sweep.max_change[p] = std::max(sweep.max_change[p], property_change(kProperties[p], *base, *obs));
      }
      series[0].push_back(obs->rect.cx);
      series[1].push_back(obs->rect.cy);
      series[2].push_back(wrap90(obs->rect.angle - base->rect.angle));
      series[3].push_back(obs->rect.size() / base->rect.size());
      series[4].push_back(obs->shear);
    }
    if (lost) {
      sweep.max_change.fill(std::numeric_limits<double>::infinity());
    } else {
      sweep.correlation[0] = std::max(std::abs(spearman(deltas, series[0])),
                                      std::abs(spearman(deltas, series[1])));
      for (std::size_t p = 1; p < 4; ++p) {
        sweep.correlation[p] = std::abs(spearman(deltas, series[p + 1]));
      }
    }
    if (!labels.empty()) {
      sweep.label = labels[k];
    } else if (!lost) {
      for (std::size_t p = 0; p < 4; ++p) {
        const double rel = sweep.max_change[p] / tol.of(kProperties[p]);
        if (rel <= 1.0) continue;
        if (!sweep.label) {
          sweep.label = kProperties[p];
          continue;
        }
        const auto cur = static_cast<std::size_t>(*sweep.label);
        const double dc = sweep.correlation[p] - sweep.correlation[cur];
        if (dc > 1e-9 ||
            (std::abs(dc) <= 1e-9 && rel > sweep.max_change[cur] / tol.of(kProperties[cur]))) {
          sweep.label = kProperties[p];
        }
      }
    }
    if (sweep.label) {
      const auto r = static_cast<std::size_t>(*sweep.label);
      for (std::size_t c = 0; c < 4; ++c) {
        CellStatus& cell = report.cells[r][c];
        if (cell == CellStatus::not_applicable || cell == CellStatus::fail) continue;
        cell = sweep.max_change[c] <= tol.of(kProperties[c]) ? CellStatus::pass : CellStatus::fail;
      }
    }
    report.sweeps.push_back(std::move(sweep));
  }
  return report;
}

double ContinuityResult::overall() const {
  double passed = 0.0;
  int total = 0;
  for (std::size_t p = 0; p < 4; ++p) {
    passed += pass_ratio[p] * checks[p];
    total += checks[p];
  }
  return total ? passed / total : 1.0;
}

namespace {

bool code_has(const LatentCode& code, Factor f) {
  return std::any_of(code.factors().begin(), code.factors().end(),
                     [f](const FactorRange& r) { return r.factor == f; });
}

bool inside_box(const Vector& z) { return (z.array().abs() <= 1.0 + 1e-12).all(); }

}  // namespace

ContinuityResult check_continuity(const Network& g, const LatentCode& code, const Canvas& canvas,
                                  const ContinuityConfig& config,
                                  const std::vector<Property>& families) {
  if (g.input_dim() != code.dim() || g.output_dim() != canvas.pixels()) {
    throw ShapeError("check_continuity: generator does not match the latent code or canvas");
  }
  return check_continuity(as_generator(g), code, canvas, config, families);
}

ContinuityResult check_continuity(const Generator& g, const LatentCode& code, const Canvas& canvas,
                                  const ContinuityConfig& config,
                                  const std::vector<Property>& families) {
  if (config.pairs < 1 || config.points_per_pair < 1) {
    throw RangeError("check_continuity: need at least one pair and one point");
  }
  ContinuityResult result;
  for (Property family : families) {
    const auto fi = static_cast<std::size_t>(family);
    const bool ok = family == Property::translation
                        ? code_has(code, Factor::tx) && code_has(code, Factor::ty)
                        : code_has(code, family == Property::rotation  ? Factor::theta
                                         : family == Property::scaling ? Factor::scale
                                                                       : Factor::shear);
    if (!ok) {
      throw ProtocolError(std::string("check_continuity: the latent code has no ") + to_string(family) +
                          " factor");
    }
    const double delta = config.delta[fi];
    const double bound = delta + config.slack.of(family);
    Rng rng(config.seed + 0x9e3779b97f4a7c15ULL * (fi + 1));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int retries = 0;
    int passed = 0;
    int total = 0;
    for (int pair = 0; pair < config.pairs; ++pair) {
      GeomParams p1, p2;
      Vector z1, z2;
      while (true) {
        if (retries++ > config.max_retries) {
          throw ProtocolError(std::string("check_continuity: cannot place ") + to_string(family) +
                              " pairs inside the latent box and the frame");
        }
        Vector z(static_cast<Eigen::Index>(code.dim()));
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = u(rng);
        p1 = code.decode(z);
        // Shear and rotation/scaling are entangled in the enclosing
        // rectangle, so the base image holds the confounding factor at zero.
        if (family == Property::rotation || family == Property::scaling) p1.shx = 0.0;
        if (family == Property::shearing) p1.theta = 0.0;
        p2 = p1;
        const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
        switch (family) {
          case Property::translation: {
            const double phi = 2.0 * std::numbers::pi * unit(rng);
            p2.tx += delta * std::cos(phi);
            p2.ty += delta * std::sin(phi);
            break;
          }
          case Property::rotation:
            p2.theta += sign * delta;
            break;
          case Property::scaling:
            p2.sx = p2.sy = p1.sx * (1.0 + delta);
            if (sign < 0) std::swap(p1, p2);
            break;
          case Property::shearing:
            p2.shx += sign * delta / (0.5 * canvas.side * p1.sy);
            break;
        }
        z1 = code.encode(p1);
        z2 = code.encode(p2);
        if (inside_box(z1) && inside_box(z2) && in_frame(p1, canvas) && in_frame(p2, canvas)) break;
      }
      const Observation m1 = observe(render(p1, canvas), canvas, config.threshold);
      const Observation m2 = observe(render(p2, canvas), canvas, config.threshold);
      const auto n = static_cast<Eigen::Index>(config.points_per_pair);
      Matrix pts(z1.size(), n);
      for (Eigen::Index k = 0; k < n; ++k) pts.col(k) = z1 + unit(rng) * (z2 - z1);
      const Matrix images = g(pts);
      if (static_cast<std::size_t>(images.rows()) != canvas.pixels() || images.cols() != n) {
        throw ShapeError("check_continuity: generator output does not match the canvas");
      }
      for (Eigen::Index k = 0; k < n; ++k) {
        const auto m = try_observe(images.col(k), canvas, config.threshold);
        ++total;
        if (m && property_change(family, m1, *m) <= bound && property_change(family, m2, *m) <= bound) {
          ++passed;
        }
      }
    }
    result.checks[fi] = total;
    result.pass_ratio[fi] = static_cast<double>(passed) / static_cast<double>(total);
  }
  return result;
}

std::string independence_csv(const IndependenceReport& report) {
  std::ostringstream out;
  out << "mutated";
  for (Property p : kProperties) out << ',' << to_string(p);
  out << '\n';
  for (std::size_t r = 0; r < 4; ++r) {
    out << to_string(kProperties[r]);
    for (std::size_t c = 0; c < 4; ++c) out << ',' << to_string(report.cells[r][c]);
    out << '\n';
  }
  return out.str();
}

std::string continuity_csv(const std::vector<std::pair<std::string, ContinuityResult>>& rows) {
  std::ostringstream out;
  out.precision(6);
  out << "delta";
  for (Property p : kProperties) out << ',' << to_string(p);
  out << '\n';
  for (const auto& [name, res] : rows) {
    out << name;
    for (std::size_t p = 0; p < 4; ++p) {
      out << ',';
      if (res.checks[p] > 0) out << res.pass_ratio[p];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace latcert
