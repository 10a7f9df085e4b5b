#include "pam/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pam {

std::optional<Box2D> bounding_box(const Mask2D& m) {
  Box2D b{m.cols(), m.rows(), -1, -1};
  bool any = false;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      if (m(r, c)) {
        any = true;
        b.x0 = std::min(b.x0, c);
        b.y0 = std::min(b.y0, r);
        b.x1 = std::max(b.x1, c + 1);
        b.y1 = std::max(b.y1, r + 1);
      }
  if (!any) return std::nullopt;
  return b;
}

std::optional<Box2D> tight_bbox(const Mask2D& m, Index min_pixels) {
  if (count(m) <= min_pixels) return std::nullopt;
  return bounding_box(m);
}

Box2D scale_box(const Box2D& b, double sx, double sy, Index rows, Index cols) {
  const double cx = 0.5 * static_cast<double>(b.x0 + b.x1);
  const double cy = 0.5 * static_cast<double>(b.y0 + b.y1);
  const double hw = 0.5 * static_cast<double>(b.width()) * sx;
  const double hh = 0.5 * static_cast<double>(b.height()) * sy;
  Box2D out = b;
  out.x0 = std::clamp<Index>(static_cast<Index>(std::floor(cx - hw)), 0, cols);
  out.x1 = std::clamp<Index>(static_cast<Index>(std::ceil(cx + hw)), 0, cols);
  out.y0 = std::clamp<Index>(static_cast<Index>(std::floor(cy - hh)), 0, rows);
  out.y1 = std::clamp<Index>(static_cast<Index>(std::ceil(cy + hh)), 0, rows);
  if (!out.valid()) throw Error("bounds", "box lies outside the slice");
  return out;
}

Box2D jitter_bbox(const Box2D& b, double lo, double hi, Index rows, Index cols,
                  std::mt19937_64& rng) {
  if (!(lo >= 1.0 && hi >= lo)) throw std::invalid_argument("jitter_bbox: need 1 <= lo <= hi");
  std::uniform_real_distribution<double> ratio(lo, hi);
  const double sx = lo == hi ? lo : ratio(rng);
  const double sy = lo == hi ? lo : ratio(rng);
  return scale_box(b, sx, sy, rows, cols);
}

SortedSample::SortedSample(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw Error("empty_mask", "percentile of an empty sample");
  std::sort(values_.begin(), values_.end());
}

double SortedSample::percentile(double p) const {
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values_.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values_.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values_[lo] + frac * (values_[hi] - values_[lo]);
}

double percentile(std::vector<double> values, double p) {
  return SortedSample(std::move(values)).percentile(p);
}

NormParams norm_params(const Image& image, const Mask2D& region, double lo_pct, double hi_pct) {
  if (image.rows() != region.rows() || image.cols() != region.cols())
    throw Error("shape_mismatch", "normalization region does not match image");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(count(region)));
  for (Index i = 0; i < image.size(); ++i)
    if (region.data()[i]) values.push_back(image.data()[i]);
  if (values.empty()) throw Error("empty_mask", "normalization region is empty");
  const SortedSample s(std::move(values));
  NormParams p{s.percentile(lo_pct), s.percentile(hi_pct), false};
  p.degenerate = !(p.v_max > p.v_min);
  return p;
}

Image apply_normalization(const Image& image, const NormParams& params) {
  if (params.degenerate || !(params.v_max > params.v_min))
    return Image::Constant(image.rows(), image.cols(), 0.5f);
  const double range = params.v_max - params.v_min;
  Image out(image.rows(), image.cols());
  for (Index i = 0; i < image.size(); ++i) {
    const double v = std::clamp<double>(image.data()[i], params.v_min, params.v_max);
    out.data()[i] = static_cast<float>((v - params.v_min) / range);
  }
  return out;
}

std::pair<Image, NormParams> normalize_intensity(const Image& crop, const Mask2D& region) {
  const NormParams p = norm_params(crop, region);
  return {apply_normalization(crop, p), p};
}

template <typename Scalar>
Image2D<Scalar> crop(const Image2D<Scalar>& image, const Box2D& box) {
  if (!box.valid() || box.x0 < 0 || box.y0 < 0 || box.x1 > image.cols() || box.y1 > image.rows())
    throw Error("bounds", "crop box outside image");
  return image.block(box.y0, box.x0, box.height(), box.width());
}

template Image crop(const Image&, const Box2D&);
template Mask2D crop(const Mask2D&, const Box2D&);

Image resize_image(const Image& image, Index rows, Index cols) {
  if (image.rows() == rows && image.cols() == cols) return image;
  Tensor<float> t({1, 1, image.rows(), image.cols()},
                  std::vector<float>(image.data(), image.data() + image.size()));
  const Tensor<float> r = resize_bilinear(t, rows, cols);
  return Eigen::Map<const Image>(r.data(), rows, cols);
}

Mask2D resize_mask(const Mask2D& mask, Index rows, Index cols) {
  if (mask.rows() == rows && mask.cols() == cols) return mask;
  if (rows <= 0 || cols <= 0) throw Error("bounds", "resize to non-positive size");
  Mask2D out(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Index sr = std::min<Index>(r * mask.rows() / rows, mask.rows() - 1);
    for (Index c = 0; c < cols; ++c)
      out(r, c) = mask(sr, std::min<Index>(c * mask.cols() / cols, mask.cols() - 1));
  }
  return out;
}

Mask2D threshold(const Image& prob, float level) { return (prob > level).cast<std::uint8_t>(); }

namespace {

// Bilinear sample; nullopt outside the pixel-centre hull.
float sample_bilinear(const Image& img, double x, double y, float fill) {
  if (x < 0 || y < 0 || x > static_cast<double>(img.cols() - 1) ||
      y > static_cast<double>(img.rows() - 1))
    return fill;
  const auto x0 = static_cast<Index>(std::floor(x));
  const auto y0 = static_cast<Index>(std::floor(y));
  const Index x1 = std::min<Index>(x0 + 1, img.cols() - 1);
  const Index y1 = std::min<Index>(y0 + 1, img.rows() - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const double top = img(y0, x0) + fx * (img(y0, x1) - img(y0, x0));
  const double bot = img(y1, x0) + fx * (img(y1, x1) - img(y1, x0));
  return static_cast<float>(top + fy * (bot - top));
}

Image clip01(Image img) { return img.max(0.0f).min(1.0f); }

struct Geometric {
  bool flip_h = false, flip_v = false;
  double angle = 0;
};

Geometric draw_geometric(std::mt19937_64& rng, const AugmentPolicy& policy) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Geometric g;
  g.flip_h = unit(rng) < policy.flip_prob;
  g.flip_v = unit(rng) < policy.flip_prob;
  if (unit(rng) < policy.rotate_prob)
    g.angle = (2.0 * unit(rng) - 1.0) * policy.max_rotation_deg;
  return g;
}

void apply_geometric(const Geometric& g, Image& image, Mask2D& mask) {
  if (g.flip_h) {
    image = flip_horizontal(image);
    mask = flip_horizontal(mask);
  }
  if (g.flip_v) {
    image = flip_vertical(image);
    mask = flip_vertical(mask);
  }
  if (g.angle != 0) {
    image = rotate(image, g.angle, 0.0f);
    mask = rotate(mask, g.angle);
  }
}

}  // namespace

Image rotate(const Image& image, double degrees, float fill) {
  const double t = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  const double cx = 0.5 * static_cast<double>(image.cols() - 1);
  const double cy = 0.5 * static_cast<double>(image.rows() - 1);
  Image out(image.rows(), image.cols());
  for (Index r = 0; r < image.rows(); ++r)
    for (Index k = 0; k < image.cols(); ++k) {
      const double dx = static_cast<double>(k) - cx, dy = static_cast<double>(r) - cy;
      out(r, k) = sample_bilinear(image, c * dx + s * dy + cx, -s * dx + c * dy + cy, fill);
    }
  return out;
}

Mask2D rotate(const Mask2D& mask, double degrees) {
  return (rotate(Image(mask.cast<float>()), degrees, 0.0f) >= 0.5f).cast<std::uint8_t>();
}

RoiSample augment(RoiSample sample, std::mt19937_64& rng, const AugmentPolicy& policy) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Geometric g = draw_geometric(rng, policy);
  apply_geometric(g, sample.image, sample.target);
  if (unit(rng) < policy.photometric_prob) {
    const double b = (2.0 * unit(rng) - 1.0) * policy.brightness;
    const double k = 1.0 + (2.0 * unit(rng) - 1.0) * policy.contrast;
    sample.image = sample.image * static_cast<float>(k) + static_cast<float>(b);
  }
  sample.image = clip01(std::move(sample.image));
  return sample;
}

PropagationTask augment(PropagationTask task, std::mt19937_64& rng, const AugmentPolicy& policy) {
  apply_geometric(draw_geometric(rng, policy), task.guide_image, task.guide_mask);
  task.guide_image = clip01(std::move(task.guide_image));
  for (std::size_t i = 0; i < task.adjacent_images.size(); ++i) {
    apply_geometric(draw_geometric(rng, policy), task.adjacent_images[i], task.adjacent_targets[i]);
    task.adjacent_images[i] = clip01(std::move(task.adjacent_images[i]));
  }
  return task;
}

std::optional<RoiSample> build_roi_sample(const VolumeF& volume, const Mask3D& mask, Axis axis,
                                          Index slice, const RoiConfig& cfg, std::mt19937_64& rng) {
  const Mask2D m = mask.slice(axis, slice);
  const auto tight = tight_bbox(m);
  if (!tight) return std::nullopt;
  const Image img = volume.slice(axis, slice);
  Box2D box = jitter_bbox(*tight, cfg.jitter_lo, cfg.jitter_hi, m.rows(), m.cols(), rng);
  box.slice = slice;
  box.axis = axis;
  const NormParams p = norm_params(img, m);
  RoiSample s;
  s.image = apply_normalization(resize_image(crop(img, box), cfg.resolution, cfg.resolution), p);
  s.target = resize_mask(crop(m, box), cfg.resolution, cfg.resolution);
  s.slice = slice;
  s.box = box;
  return s;
}

Mask2D erode(const Mask2D& mask, int radius) {
  if (radius < 0) throw std::invalid_argument("erode: negative radius");
  Mask2D out = Mask2D::Zero(mask.rows(), mask.cols());
  const Index r = radius;
  for (Index y = r; y + r < mask.rows(); ++y)
    for (Index x = r; x + r < mask.cols(); ++x)
      out(y, x) = mask.block(y - r, x - r, 2 * r + 1, 2 * r + 1).minCoeff();
  return out;
}

std::vector<Index> candidate_offsets(Index guide, Index count, double spacing_mm,
                                     double thickness_mm) {
  std::vector<Index> out;
  if (!(spacing_mm > 0)) throw std::invalid_argument("candidate_offsets: spacing must be > 0");
  const auto reach = static_cast<Index>(std::floor(thickness_mm / spacing_mm + 1e-9));
  for (Index d = -reach; d <= reach; ++d) {
    if (d == 0 || guide + d < 0 || guide + d >= count) continue;
    out.push_back(d);
  }
  return out;
}

PropagationTask build_roi_task(const VolumeF& volume, const Mask3D& mask, Axis axis, Index guide,
                               const TaskConfig& cfg, std::mt19937_64& rng) {
  const Mask2D gm = mask.slice(axis, guide);
  const auto tight = tight_bbox(gm);
  if (!tight) throw Error("empty_mask", "guiding slice has too little foreground");
  const auto spacing = volume.spacing[static_cast<int>(axis)];
  const auto offsets = candidate_offsets(guide, volume.slice_count(axis), spacing, cfg.thickness_mm);
  if (offsets.empty()) throw Error("no_adjacent", "no adjacent slices within thickness");

  PropagationTask task;
  task.box = jitter_bbox(*tight, cfg.jitter_lo, cfg.jitter_hi, gm.rows(), gm.cols(), rng);
  task.box.slice = guide;
  task.box.axis = axis;
  const Image gimg = volume.slice(axis, guide);
  task.norm = norm_params(gimg, gm);

  const auto r = cfg.resolution;
  auto prepare = [&](const Image& img) {
    return apply_normalization(resize_image(crop(img, task.box), r, r), task.norm);
  };
  task.guide_image = prepare(gimg);
  task.guide_mask = resize_mask(crop(gm, task.box), r, r);

  std::vector<Index> picked;
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.n_adjacent), offsets.size());
  std::sample(offsets.begin(), offsets.end(), std::back_inserter(picked), n, rng);
  for (Index d : picked) {
    task.adjacent_images.push_back(prepare(volume.slice(axis, guide + d)));
    task.adjacent_targets.push_back(resize_mask(crop(mask.slice(axis, guide + d), task.box), r, r));
    task.offsets_mm.push_back(static_cast<double>(d) * spacing);
  }
  return task;
}

}  // namespace pam
