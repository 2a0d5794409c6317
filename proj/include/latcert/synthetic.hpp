// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "latcert/directions.hpp"
#include "latcert/network.hpp"
#include "latcert/regulate.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace latcert {

/// Geometric mutation of the seed square. Translation in pixels, rotation in
/// degrees, scale and shear dimensionless.
struct GeomParams {
  double tx = 0.0;
  double ty = 0.0;
  double theta = 0.0;
  double sx = 1.0;
  double sy = 1.0;
  double shx = 0.0;
  double shy = 0.0;

  void validate() const;
};

/// Rectangle in pixel coordinates (x right, y down, origin at the top-left
/// pixel's center). Angle in (-45, 45], so width and height follow it.
struct RectMeasure {
  double cx = 0.0;
  double cy = 0.0;
  double width = 0.0;
  double height = 0.0;
  double angle = 0.0;

  double size() const;
};

/// Scale, shear (i + shx j, j + shy i), rotate, translate. Coordinates are
/// relative to the image center with y pointing down.
std::array<double, 2> affine_map(const GeomParams& p, double i, double j);

/// Image size and the side of the axis-aligned seed square.
struct Canvas {
  int height = 32;
  int width = 32;
  double side = 12.0;

  std::size_t pixels() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  void validate() const;
};

/// Row-major image in [0, 1]: inverse warp of the crisp seed square with
/// bilinear interpolation.
Vector render(const GeomParams& p, const Canvas& canvas = {});

/// Whether every corner of the transformed square lies `margin` pixels
/// inside the frame.
bool in_frame(const GeomParams& p, const Canvas& canvas, double margin = 1.0);

RectMeasure min_enclosing_rect(const Vector& image, const Canvas& canvas, double threshold = 0.5);

/// Rectangle and horizontal shear offset (pixels at half-height) of the
/// object in an image.
struct Observation {
  RectMeasure rect;
  double shear = 0.0;
};

/// The shear offset comes from second moments of a soft mask: a rotated or
/// scaled square keeps an isotropic covariance while x-shear does not.
Observation observe(const Vector& image, const Canvas& canvas, double threshold = 0.5);

enum class Factor { tx, ty, theta, scale, shear };
enum class Property { translation, rotation, scaling, shearing };
inline const std::vector<Property> kAllProperties{Property::translation, Property::rotation,
                                                  Property::scaling, Property::shearing};

const char* to_string(Factor f);
const char* to_string(Property p);
Property property_of(Factor f);
/// Inverse of to_string; throws FormatError on unknown names.
Factor factor_from_string(const std::string& s);
Property property_from_string(const std::string& s);

struct FactorRange {
  Factor factor = Factor::tx;
  double lo = 0.0;
  double hi = 0.0;
};

/// Linear map between selected geometric factors and [-1, 1]^d. Factors not
/// listed keep their identity value; scale sets sx = sy, shear sets shx.
class LatentCode {
 public:
  explicit LatentCode(std::vector<FactorRange> factors);

  /// tx, ty in +-6 px, rotation +-30 deg, scale 0.8..1.3, shear +-0.9.
  static LatentCode standard();

  std::size_t dim() const { return factors_.size(); }
  const std::vector<FactorRange>& factors() const { return factors_; }
  Vector encode(const GeomParams& p) const;
  GeomParams decode(const Vector& z) const;

 private:
  std::vector<FactorRange> factors_;
};

struct Dataset {
  Canvas canvas;
  std::vector<FactorRange> factors;
  std::vector<GeomParams> params;
  /// One image per column.
  Matrix images;

  std::size_t size() const { return params.size(); }
  TrainingSet training_set() const;
};

/// Samples codes uniformly from [-1, 1]^d and renders them; samples whose
/// square leaves the frame are redrawn.
Dataset gen_dataset(std::size_t n, const LatentCode& code, std::uint64_t seed,
                    const Canvas& canvas = {}, int max_retries = 1000);

/// Writes <stem>.f32 (float32 LE, count x height x width) and <stem>.json.
void save_dataset(const Dataset& ds, const std::string& stem);
Dataset load_dataset(const std::string& manifest_path);

struct Tolerances {
  double translation = 1.0;  // px
  double rotation = 3.0;     // deg
  double scaling = 0.05;     // relative
  double shearing = 1.0;     // px
  double of(Property p) const;
};

/// Change of property p from `from` to `to`: center distance, angle
/// difference modulo 90, relative size change, shear offset difference.
double property_change(Property p, const Observation& from, const Observation& to);

/// Average-rank Spearman correlation; 0 when either series is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

enum class CellStatus { pass, fail, not_applicable, untested };
const char* to_string(CellStatus s);

/// Whether the row mutation vs. column observation pair can be checked from
/// the enclosing rectangle.
bool checkable(Property mutated, Property observed);

struct IndependenceConfig {
  double delta_max = 0.3;
  int steps = 21;
  double threshold = 0.5;
  Tolerances tolerances;
  /// Sweep center; empty means the latent origin.
  Vector reference;
};

struct DirectionSweep {
  Vector direction;
  std::optional<Property> label;
  /// Largest change of each property over the sweep.
  std::array<double, 4> max_change{};
  std::array<double, 4> correlation{};
};

struct IndependenceReport {
  std::vector<DirectionSweep> sweeps;
  std::array<std::array<CellStatus, 4>, 4> cells{};
  bool all_pass() const;
};

/// Batch image producer: latent codes in columns, row-major images out.
using Generator = std::function<Matrix(const Matrix&)>;

Generator as_generator(const Network& g);
/// The ground-truth generator decode-then-render.
Generator exact_generator(const LatentCode& code, const Canvas& canvas);

/// Sweeps each of the first `rank` basis directions and labels it with the
/// property whose change exceeds tolerance with the largest |Spearman|
/// correlation (ties go to the larger change relative to tolerance).
/// Explicit labels, when given, must cover every direction.
IndependenceReport check_independence(const Generator& g, const DirectionBasis& basis,
                                      const Canvas& canvas, const IndependenceConfig& config,
                                      const std::vector<std::optional<Property>>& labels = {});
IndependenceReport check_independence(const Network& g, const DirectionBasis& basis,
                                      const Canvas& canvas, const IndependenceConfig& config,
                                      const std::vector<std::optional<Property>>& labels = {});

struct ContinuityConfig {
  int pairs = 100;
  int points_per_pair = 100;
  /// Difference between the two ground-truth endpoints per property:
  /// 10 px, 30 deg, 50 %, 10 px of shear offset at half-height.
  std::array<double, 4> delta{10.0, 30.0, 0.5, 10.0};
  /// Extra slack for the measurement of generated images.
  Tolerances slack;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  int max_retries = 10000;
};

struct ContinuityResult {
  std::array<double, 4> pass_ratio{};
  std::array<int, 4> checks{};
  double overall() const;
};

/// Renders endpoint pairs x1, x2 whose property differs by delta, encodes
/// them, samples points of the latent segment and checks that G's image at
/// each point stays within delta (plus slack) of both endpoints.
ContinuityResult check_continuity(const Generator& g, const LatentCode& code, const Canvas& canvas,
                                  const ContinuityConfig& config,
                                  const std::vector<Property>& families = kAllProperties);
ContinuityResult check_continuity(const Network& g, const LatentCode& code, const Canvas& canvas,
                                  const ContinuityConfig& config,
                                  const std::vector<Property>& families = kAllProperties);

/// Table-shaped CSV reports.
std::string independence_csv(const IndependenceReport& report);
std::string continuity_csv(const std::vector<std::pair<std::string, ContinuityResult>>& rows);

nlohmann::json to_json(const GeomParams& p);
GeomParams geom_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RectMeasure& r);

}  // namespace latcert
