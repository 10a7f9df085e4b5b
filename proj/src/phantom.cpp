#include "pam/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pam {

ShapeFamily parse_family(const std::string& name) {
  if (name == "ellipsoid") return ShapeFamily::kEllipsoid;
  if (name == "capsule") return ShapeFamily::kCapsule;
  if (name == "torus") return ShapeFamily::kTorus;
  if (name == "blob") return ShapeFamily::kBlob;
  throw Error("bad_family", "unknown phantom family '" + name + "'");
}

const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kEllipsoid: return "ellipsoid";
    case ShapeFamily::kCapsule: return "capsule";
    case ShapeFamily::kTorus: return "torus";
    case ShapeFamily::kBlob: return "blob";
  }
  return "?";
}

nlohmann::ordered_json PhantomSpec::to_json() const {
  nlohmann::ordered_json j;
  j["family"] = family_name(family);
  j["center_mm"] = center_mm;
  j["size_mm"] = size_mm;
  j["yaw_deg"] = yaw_deg;
  j["tilt_deg"] = tilt_deg;
  j["blob_count"] = blob_count;
  j["foreground"] = foreground;
  j["background"] = background;
  j["noise_sigma"] = noise_sigma;
  j["distractors"] = distractors;
  j["seed"] = seed;
  return j;
}

PhantomSpec PhantomSpec::from_json(const nlohmann::json& j) {
  PhantomSpec s;
  s.family = parse_family(j.at("family").get<std::string>());
  s.center_mm = j.at("center_mm").get<Vec3>();
  s.size_mm = j.at("size_mm").get<Vec3>();
  s.yaw_deg = j.value("yaw_deg", 0.0);
  s.tilt_deg = j.value("tilt_deg", 0.0);
  s.blob_count = j.value("blob_count", 5);
  s.foreground = j.value("foreground", 0.7);
  s.background = j.value("background", 0.3);
  s.noise_sigma = j.value("noise_sigma", 0.0);
  s.distractors = j.value("distractors", 0);
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

PhantomShape::PhantomShape(const PhantomSpec& spec) : spec_(spec) {
  const double yaw = spec.yaw_deg * std::numbers::pi / 180.0;
  const double tilt = spec.tilt_deg * std::numbers::pi / 180.0;
  const double cy = std::cos(yaw), sy = std::sin(yaw), ct = std::cos(tilt), st = std::sin(tilt);
  // Rz(yaw) * Rx(tilt)
  rot_ = {{{cy, -sy * ct, sy * st}, {sy, cy * ct, -cy * st}, {0.0, st, ct}}};

  auto positive = [](double v) { return v > 0 && std::isfinite(v); };
  const auto& s = spec.size_mm;
  bool ok = true;
  switch (spec.family) {
    case ShapeFamily::kEllipsoid: ok = positive(s[0]) && positive(s[1]) && positive(s[2]); break;
    case ShapeFamily::kCapsule: ok = positive(s[0]) && s[1] >= 0; break;
    case ShapeFamily::kTorus: ok = positive(s[0]) && positive(s[1]) && s[1] < s[0]; break;
    case ShapeFamily::kBlob: ok = s[0] >= 0 && positive(s[1]) && spec.blob_count >= 1; break;
  }
  if (!ok) throw Error("bounds", std::string("degenerate ") + family_name(spec.family) + " size");

  if (spec.family == ShapeFamily::kBlob) {
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> unit(-1.0, 1.0), scale(0.6, 1.0);
    for (int k = 0; k < spec.blob_count; ++k) {
      Vec3 d;
      do {
        d = {unit(rng), unit(rng), unit(rng)};
      } while (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] > 1.0);
      ball_centers_.push_back({spec.center_mm[0] + s[0] * d[0], spec.center_mm[1] + s[0] * d[1],
                               spec.center_mm[2] + s[0] * d[2]});
      ball_radii_.push_back(s[1] * scale(rng));
    }
  }
}

double PhantomShape::bounding_radius() const {
  const auto& s = spec_.size_mm;
  switch (spec_.family) {
    case ShapeFamily::kEllipsoid: return std::max({s[0], s[1], s[2]});
    case ShapeFamily::kCapsule: return s[0] + s[1];
    case ShapeFamily::kTorus: return s[0] + s[1];
    case ShapeFamily::kBlob: return s[0] + s[1] * std::sqrt(static_cast<double>(spec_.blob_count));
  }
  return 0;
}

bool PhantomShape::contains(const Vec3& p) const {
  if (spec_.family == ShapeFamily::kBlob) {
    double field = 0;
    for (std::size_t k = 0; k < ball_centers_.size(); ++k) {
      const double dx = p[0] - ball_centers_[k][0], dy = p[1] - ball_centers_[k][1],
                   dz = p[2] - ball_centers_[k][2];
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 == 0) return true;
      field += ball_radii_[k] * ball_radii_[k] / d2;
    }
    return field >= 1.0;
  }
  const Vec3 d{p[0] - spec_.center_mm[0], p[1] - spec_.center_mm[1], p[2] - spec_.center_mm[2]};
  // local = R^T * d
  Vec3 q{};
  for (int a = 0; a < 3; ++a) q[a] = rot_[0][a] * d[0] + rot_[1][a] * d[1] + rot_[2][a] * d[2];
  const auto& s = spec_.size_mm;
  switch (spec_.family) {
    case ShapeFamily::kEllipsoid: {
      const double u = q[0] / s[0], v = q[1] / s[1], w = q[2] / s[2];
      return u * u + v * v + w * w <= 1.0;
    }
    case ShapeFamily::kCapsule: {
      const double t = std::clamp(q[2], -s[1], s[1]);
      const double dz = q[2] - t;
      return q[0] * q[0] + q[1] * q[1] + dz * dz <= s[0] * s[0];
    }
    case ShapeFamily::kTorus: {
      const double ring = std::sqrt(q[0] * q[0] + q[1] * q[1]) - s[0];
      return ring * ring + q[2] * q[2] <= s[1] * s[1];
    }
    case ShapeFamily::kBlob: break;
  }
  return false;
}

std::pair<VolumeF, Mask3D> generate_phantom(const PhantomSpec& spec, std::array<Index, 3> dims,
                                            std::array<double, 3> spacing) {
  const PhantomShape shape(spec);
  const double r = shape.bounding_radius();
  for (int a = 0; a < 3; ++a) {
    const double extent = static_cast<double>(dims[a]) * spacing[a];
    if (spec.center_mm[a] - r < 0 || spec.center_mm[a] + r > extent)
      throw Error("bounds", std::string(family_name(spec.family)) + " exceeds volume along axis " +
                                std::to_string(a));
  }
  if (spec.noise_sigma < 0) throw Error("bounds", "noise sigma must be >= 0");

  VolumeF vol(dims, spacing, static_cast<float>(spec.background));
  Mask3D mask(dims, spacing, 0);
  for (Index k = 0; k < dims[2]; ++k)
    for (Index j = 0; j < dims[1]; ++j)
      for (Index i = 0; i < dims[0]; ++i)
        if (shape.contains(voxel_center(spacing, i, j, k))) {
          mask(i, j, k) = 1;
          vol(i, j, k) = static_cast<float>(spec.foreground);
        }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int d = 0; d < spec.distractors; ++d) {
    const double radius = 3.0 + 3.0 * unit(rng);
    Vec3 c;
    for (int a = 0; a < 3; ++a) c[a] = unit(rng) * static_cast<double>(dims[a]) * spacing[a];
    const double level = std::clamp(spec.foreground * (0.8 + 0.3 * unit(rng)), 0.0, 1.0);
    for (Index k = 0; k < dims[2]; ++k)
      for (Index j = 0; j < dims[1]; ++j)
        for (Index i = 0; i < dims[0]; ++i) {
          if (mask(i, j, k)) continue;
          const Vec3 p = voxel_center(spacing, i, j, k);
          const double dx = p[0] - c[0], dy = p[1] - c[1], dz = p[2] - c[2];
          if (dx * dx + dy * dy + dz * dz <= radius * radius) vol(i, j, k) = static_cast<float>(level);
        }
  }
  if (spec.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (Index n = 0; n < vol.size(); ++n) vol.voxels[n] += static_cast<float>(noise(rng));
  }
  return {std::move(vol), std::move(mask)};
}

PhantomSpec random_phantom_spec(ShapeFamily family, const PhantomGeometry& geometry,
                                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  PhantomSpec s;
  s.family = family;
  s.seed = rng();
  for (int a = 0; a < 3; ++a) {
    const double extent = static_cast<double>(geometry.dims[a]) * geometry.spacing[a];
    s.center_mm[a] = extent * between(0.45, 0.55);
  }
  s.yaw_deg = between(0, 180);
  switch (family) {
    case ShapeFamily::kEllipsoid:
      s.size_mm = {between(9, 22), between(9, 22), between(12, 32)};
      s.tilt_deg = between(-20, 20);
      break;
    case ShapeFamily::kCapsule:
      s.size_mm = {between(7, 13), between(8, 22), 0};
      s.tilt_deg = between(-30, 30);
      break;
    case ShapeFamily::kTorus:
      s.size_mm = {between(12, 20), between(5, 9), 0};
      s.tilt_deg = between(0, 90);
      break;
    case ShapeFamily::kBlob:
      s.size_mm = {between(8, 14), between(6, 9), 0};
      s.blob_count = 4 + static_cast<int>(unit(rng) * 3);
      break;
  }
  s.background = between(0.15, 0.45);
  s.foreground = std::min(1.0, s.background + between(0.25, 0.5));
  s.noise_sigma = between(0.02, 0.08);
  s.distractors = static_cast<int>(unit(rng) * 3);

  // Shrink until the enclosing sphere fits.
  for (int attempt = 0; attempt < 50; ++attempt) {
    const double r = PhantomShape(s).bounding_radius();
    bool fits = true;
    for (int a = 0; a < 3; ++a) {
      const double extent = static_cast<double>(geometry.dims[a]) * geometry.spacing[a];
      fits = fits && s.center_mm[a] - r >= 0 && s.center_mm[a] + r <= extent;
    }
    if (fits) return s;
    for (auto& v : s.size_mm) v *= 0.9;
  }
  throw Error("bounds", "could not fit a random phantom into the volume");
}

}  // namespace pam
