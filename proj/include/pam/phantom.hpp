#pragma once

#include "pam/volume.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>

namespace pam {

enum class ShapeFamily { kEllipsoid, kCapsule, kTorus, kBlob };

ShapeFamily parse_family(const std::string& name);
const char* family_name(ShapeFamily f);

using Vec3 = std::array<double, 3>;

/// Procedural stand-in for an annotated scan.
///
/// size_mm by family:
///   ellipsoid  (rx, ry, rz) semi-axes
///   capsule    (radius, half_length, unused), long axis = local z
///   torus      (major, minor, unused), ring normal = local z
///   blob       (spread, ball_radius, unused): `blob_count` metaballs whose
///              centres lie within `spread` of the centre, iso-surface at 1
/// The local frame is rotated by yaw about z then tilt about x.
struct PhantomSpec {
  ShapeFamily family = ShapeFamily::kEllipsoid;
  Vec3 center_mm{0, 0, 0};
  Vec3 size_mm{8, 8, 8};
  double yaw_deg = 0;
  double tilt_deg = 0;
  int blob_count = 5;
  double foreground = 0.7;
  double background = 0.3;
  double noise_sigma = 0.0;
  int distractors = 0;
  std::uint64_t seed = 0;

  nlohmann::ordered_json to_json() const;
  static PhantomSpec from_json(const nlohmann::json& j);
};

/// Analytic shape predicate at a physical point (mm).
class PhantomShape {
 public:
  explicit PhantomShape(const PhantomSpec& spec);
  bool contains(const Vec3& p) const;
  /// Radius of a sphere about the centre that encloses the shape.
  double bounding_radius() const;

 private:
  PhantomSpec spec_;
  std::array<std::array<double, 3>, 3> rot_{};  // local -> world columns
  std::vector<Vec3> ball_centers_;
  std::vector<double> ball_radii_;
};

/// Voxel centre of (i, j, k) in mm.
inline Vec3 voxel_center(const std::array<double, 3>& spacing, Index i, Index j, Index k) {
  return {(static_cast<double>(i) + 0.5) * spacing[0], (static_cast<double>(j) + 0.5) * spacing[1],
          (static_cast<double>(k) + 0.5) * spacing[2]};
}

/// Volume = background + (foreground - background) * mask + N(0, sigma), plus
/// distractor spheres outside the mask. Throws Error("bounds") when the shape
/// is degenerate or does not fit.
std::pair<VolumeF, Mask3D> generate_phantom(const PhantomSpec& spec, std::array<Index, 3> dims,
                                            std::array<double, 3> spacing);

struct PhantomGeometry {
  std::array<Index, 3> dims{80, 80, 40};
  std::array<double, 3> spacing{1.0, 1.0, 2.5};
};

/// Random spec of the given family that fits `geometry`.
PhantomSpec random_phantom_spec(ShapeFamily family, const PhantomGeometry& geometry,
                                std::mt19937_64& rng);

}  // namespace pam
