#pragma once

#include "pam/volume.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace pam {

/// Minimum foreground for a slice to yield a sample ("over 100 pixels").
inline constexpr Index kMinForegroundPixels = 100;

/// Pixel box, half-open: columns [x0, x1), rows [y0, y1).
struct Box2D {
  Index x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  Index slice = 0;
  Axis axis = Axis::kZ;

  Index width() const { return x1 - x0; }
  Index height() const { return y1 - y0; }
  Index area() const { return width() * height(); }
  bool valid() const { return x1 > x0 && y1 > y0; }
  bool contains(const Box2D& o) const {
    return o.x0 >= x0 && o.y0 >= y0 && o.x1 <= x1 && o.y1 <= y1;
  }
  bool operator==(const Box2D& o) const {
    return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1;
  }
};

/// Tightest box around all foreground pixels; nullopt for an empty mask.
std::optional<Box2D> bounding_box(const Mask2D& m);
/// Tightest box, or nullopt when the slice has <= `min_pixels` foreground.
std::optional<Box2D> tight_bbox(const Mask2D& m, Index min_pixels = kMinForegroundPixels);

/// Centre-preserving scale of width/height, rounded outward, clamped to
/// [0, cols) x [0, rows).
Box2D scale_box(const Box2D& b, double sx, double sy, Index rows, Index cols);
/// Width and height independently scaled by U[lo, hi].
Box2D jitter_bbox(const Box2D& b, double lo, double hi, Index rows, Index cols,
                  std::mt19937_64& rng);

/// Linear-interpolation percentiles of a fixed sample.
class SortedSample {
 public:
  explicit SortedSample(std::vector<double> values);
  /// p in [0, 100].
  double percentile(double p) const;
  std::size_t size() const { return values_.size(); }

 private:
  std::vector<double> values_;
};

double percentile(std::vector<double> values, double p);

struct NormParams {
  double v_min = 0;
  double v_max = 1;
  bool degenerate = false;
};

/// 0.5th / 99.5th percentiles of `image` at `region` pixels (same extent).
NormParams norm_params(const Image& image, const Mask2D& region, double lo_pct = 0.5,
                       double hi_pct = 99.5);
/// Clip to [v_min, v_max], rescale to [0, 1]; degenerate params give 0.5.
Image apply_normalization(const Image& image, const NormParams& params);
std::pair<Image, NormParams> normalize_intensity(const Image& crop, const Mask2D& region);

template <typename Scalar>
Image2D<Scalar> crop(const Image2D<Scalar>& image, const Box2D& box);

/// Half-pixel bilinear.
Image resize_image(const Image& image, Index rows, Index cols);
/// Nearest, source index floor(dst * in / out).
Mask2D resize_mask(const Mask2D& mask, Index rows, Index cols);
Mask2D threshold(const Image& prob, float level = 0.5f);
/// Binary erosion by a (2 * radius + 1)^2 square; pixels outside count as background.
Mask2D erode(const Mask2D& mask, int radius);

template <typename Scalar>
Image2D<Scalar> flip_horizontal(const Image2D<Scalar>& image) {
  return image.rowwise().reverse();
}
template <typename Scalar>
Image2D<Scalar> flip_vertical(const Image2D<Scalar>& image) {
  return image.colwise().reverse();
}
/// Rotation about the image centre, bilinear, constant fill outside.
Image rotate(const Image& image, double degrees, float fill = 0.0f);
/// Rotation of a binary mask: bilinear then >= 0.5.
Mask2D rotate(const Mask2D& mask, double degrees);

struct RoiSample {
  Image image;    ///< R x R in [0, 1]; replicated to 3 channels at the network input
  Mask2D target;  ///< R x R binary
  std::string volume_id;
  Index slice = 0;
  Box2D box;
};

struct PropagationTask {
  Image guide_image;
  Mask2D guide_mask;
  std::vector<Image> adjacent_images;
  std::vector<Mask2D> adjacent_targets;
  Box2D box;
  std::vector<double> offsets_mm;
  NormParams norm;
};

struct AugmentPolicy {
  double flip_prob = 0.5;
  double photometric_prob = 0.5;
  double brightness = 0.2;
  double contrast = 0.2;
  double rotate_prob = 0.5;
  double max_rotation_deg = 45.0;

  static AugmentPolicy box2mask() { return {}; }
  static AugmentPolicy propmask() { return {0.5, 0.0, 0.0, 0.0, 0.5, 45.0}; }
  static AugmentPolicy none() { return {0, 0, 0, 0, 0, 0}; }
};

/// Geometric transforms apply to image and target alike, photometric to the
/// image only; outputs are clipped to [0, 1].
RoiSample augment(RoiSample sample, std::mt19937_64& rng, const AugmentPolicy& policy);
/// Each image of the task (with its mask) draws its own transforms.
PropagationTask augment(PropagationTask task, std::mt19937_64& rng, const AugmentPolicy& policy);

struct RoiConfig {
  int resolution = 64;
  double jitter_lo = 1.0;
  double jitter_hi = 1.25;
};

/// Box2Mask sample from one slice; nullopt when the slice is too small.
std::optional<RoiSample> build_roi_sample(const VolumeF& volume, const Mask3D& mask, Axis axis,
                                          Index slice, const RoiConfig& cfg, std::mt19937_64& rng);

struct TaskConfig {
  int resolution = 64;
  double thickness_mm = 20.0;
  int n_adjacent = 4;
  double jitter_lo = 1.0;
  double jitter_hi = 2.0;
};

/// Slice offsets d != 0 with |d * spacing| <= thickness, inside [0, count).
std::vector<Index> candidate_offsets(Index guide, Index count, double spacing_mm,
                                     double thickness_mm);

PropagationTask build_roi_task(const VolumeF& volume, const Mask3D& mask, Axis axis, Index guide,
                               const TaskConfig& cfg, std::mt19937_64& rng);

}  // namespace pam
