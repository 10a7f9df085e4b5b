#include "pam/engine.hpp"

#include "pam/metrics.hpp"
#include "pam/rle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>

namespace pam {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void paste(Mask2D& dst, const Mask2D& src, const Box2D& box) {
  dst.block(box.y0, box.x0, box.height(), box.width()) = src;
}

Box2D context_box(const Mask2D& guide_mask, double scale) {
  const auto tight = bounding_box(guide_mask);
  if (!tight) throw Error("empty_mask", "guiding mask is empty");
  return scale_box(*tight, scale, scale, guide_mask.rows(), guide_mask.cols());
}

[[noreturn]] void bad_prompt(const std::string& msg) { throw Error("bad_prompt", msg); }

}  // namespace

Prompt parse_prompt(const nlohmann::json& j, const VolumeF& volume) {
  Prompt p;
  try {
    p.axis = parse_axis(j.value("axis", std::string("z")));
    p.slice = j.at("slice").get<Index>();
    const auto kind = j.value("kind", std::string("box"));
    if (kind == "box")
      p.kind = PromptKind::kBox;
    else if (kind == "sketch")
      p.kind = PromptKind::kSketch;
    else
      bad_prompt("kind must be box or sketch, got '" + kind + "'");
    if (p.slice < 0 || p.slice >= volume.slice_count(p.axis))
      bad_prompt("slice " + std::to_string(p.slice) + " outside the volume");
    const auto [rows, cols] = volume.slice_extent(p.axis);

    if (p.kind == PromptKind::kBox) {
      const auto b = j.at("box").get<std::vector<Index>>();
      if (b.size() != 4) bad_prompt("box must be [x0, y0, x1, y1]");
      p.box = {b[0], b[1], b[2], b[3], p.slice, p.axis};
      if (!p.box.valid()) bad_prompt("box has zero area");
      if (p.box.x0 < 0 || p.box.y0 < 0 || p.box.x1 > cols || p.box.y1 > rows)
        bad_prompt("box exceeds the slice extent");
    } else {
      const auto& r = j.at("rle");
      RleMask rle = r.is_string() ? RleMask{cols, rows, rle_from_string(r.get<std::string>())}
                                  : rle_from_json(r);
      if (rle.width != cols || rle.height != rows) bad_prompt("sketch extent differs from slice");
      p.sketch = rle_decode(rle);
      if (count(p.sketch) == 0) bad_prompt("sketch is empty");
    }
  } catch (const nlohmann::json::exception& e) {
    bad_prompt(e.what());
  } catch (const Error& e) {
    if (e.code() == "bad_prompt") throw;
    bad_prompt(e.what());
  }
  return p;
}

nlohmann::ordered_json prompt_to_json(const Prompt& p) {
  nlohmann::ordered_json j;
  j["axis"] = axis_name(p.axis);
  j["slice"] = p.slice;
  if (p.kind == PromptKind::kBox) {
    j["kind"] = "box";
    j["box"] = {p.box.x0, p.box.y0, p.box.x1, p.box.y1};
  } else {
    j["kind"] = "sketch";
    j["rle"] = rle_to_string(rle_encode(p.sketch).runs);
  }
  return j;
}

void EngineConfig::validate() const {
  if (!(thickness_mm > 0)) throw Error("bad_config", "thickness_mm must be positive");
  if (!(context_scale >= 1)) throw Error("bad_config", "context_scale must be >= 1");
  if (min_area < 1) throw Error("bad_config", "min_area must be >= 1");
  if (!(threshold > 0 && threshold < 1)) throw Error("bad_config", "threshold must be in (0, 1)");
  if (max_rounds < 1) throw Error("bad_config", "max_rounds must be >= 1");
  if (!(guide_keep_fraction >= 0 && guide_keep_fraction <= 1))
    throw Error("bad_config", "guide_keep_fraction must be in [0, 1]");
}

nlohmann::ordered_json EngineConfig::to_json() const {
  nlohmann::ordered_json j;
  j["thickness_mm"] = thickness_mm;
  j["context_scale"] = context_scale;
  j["min_area"] = min_area;
  j["threshold"] = threshold;
  j["max_rounds"] = max_rounds;
  j["guide_keep_fraction"] = guide_keep_fraction;
  return j;
}

EngineConfig EngineConfig::from_json(const nlohmann::json& j) {
  EngineConfig c;
  try {
    c.thickness_mm = j.value("thickness_mm", c.thickness_mm);
    c.context_scale = j.value("context_scale", c.context_scale);
    c.min_area = j.value("min_area", c.min_area);
    c.threshold = j.value("threshold", c.threshold);
    c.max_rounds = j.value("max_rounds", c.max_rounds);
    c.guide_keep_fraction = j.value("guide_keep_fraction", c.guide_keep_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad_config", e.what());
  }
  c.validate();
  return c;
}

std::vector<Index> slice_window(Index guide, int direction, double thickness_mm,
                                double spacing_mm, Index count) {
  if (!(spacing_mm > 0)) throw std::invalid_argument("slice_window: spacing must be positive");
  const auto n = static_cast<Index>(std::floor(thickness_mm / spacing_mm + 1e-9));
  std::vector<Index> out;
  for (Index k = 1; k <= n; ++k) {
    const Index i = guide + direction * k;
    if (i < 0 || i >= count) break;
    out.push_back(i);
  }
  return out;
}

Mask2D drop_minor_components(const Mask2D& mask, double fraction) {
  const Index rows = mask.rows(), cols = mask.cols();
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> label =
      Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Zero(rows, cols);
  std::vector<Index> sizes{0};
  std::vector<std::pair<Index, Index>> stack;
  for (Index r0 = 0; r0 < rows; ++r0)
    for (Index c0 = 0; c0 < cols; ++c0) {
      if (!mask(r0, c0) || label(r0, c0)) continue;
      const int id = static_cast<int>(sizes.size());
      Index size = 0;
      stack.assign(1, {r0, c0});
      label(r0, c0) = id;
      while (!stack.empty()) {
        const auto [r, c] = stack.back();
        stack.pop_back();
        ++size;
        for (Index dr = -1; dr <= 1; ++dr)
          for (Index dc = -1; dc <= 1; ++dc) {
            const Index rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
            if (!mask(rr, cc) || label(rr, cc)) continue;
            label(rr, cc) = id;
            stack.emplace_back(rr, cc);
          }
      }
      sizes.push_back(size);
    }
  const Index largest = *std::max_element(sizes.begin(), sizes.end());
  Mask2D out = Mask2D::Zero(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      const int id = label(r, c);
      if (id && static_cast<double>(sizes[id]) >= fraction * static_cast<double>(largest)) out(r, c) = 1;
    }
  return out;
}

InitialMask NetworkBoxSegmenter::segment(const VolumeF& volume, Axis axis, Index slice,
                                         const Box2D& box) {
  const Image img = volume.slice(axis, slice);
  const ProbabilityModel model = [this](const std::vector<Image>& xs) { return net_.predict(xs); };
  const auto r = box2mask_infer(crop(img, box), model, grid_, net_.config().resolution);
  InitialMask out{Mask2D::Zero(img.rows(), img.cols()), r.low_confidence};
  paste(out.mask, r.mask, box);
  return out;
}

std::vector<Mask2D> NetworkPropagator::propagate(const VolumeF& volume, const RoundRequest& req) {
  const Index r = net_.config().resolution;
  const Box2D& box = req.crop;
  const Image gimg = volume.slice(req.axis, req.guide);
  const Mask2D core = norm_erosion > 0 ? erode(req.guide_mask, norm_erosion) : req.guide_mask;
  const NormParams p = norm_params(gimg, count(core) > 0 ? core : req.guide_mask);
  auto prepare = [&](const Image& img) {
    return apply_normalization(resize_image(crop(img, box), r, r), p);
  };
  const Image prompt = resize_mask(crop(req.guide_mask, box), r, r).cast<float>();
  const auto features = net_.encode_guide(prepare(gimg), prompt);

  std::vector<Image> adjacent;
  adjacent.reserve(req.targets.size());
  for (Index t : req.targets) adjacent.push_back(prepare(volume.slice(req.axis, t)));
  const auto probs = net_.predict(features, adjacent, batch_);

  std::vector<Mask2D> out;
  out.reserve(probs.size());
  for (const auto& prob : probs) {
    Mask2D m = Mask2D::Zero(gimg.rows(), gimg.cols());
    paste(m, threshold(resize_image(prob, box.height(), box.width()), threshold_), box);
    out.push_back(std::move(m));
  }
  return out;
}

InitialMask OracleBoxSegmenter::segment(const VolumeF&, Axis axis, Index slice, const Box2D& box) {
  const Mask2D full = truth_.slice(axis, slice);
  InitialMask out{Mask2D::Zero(full.rows(), full.cols()), false};
  paste(out.mask, crop(full, box), box);
  return out;
}

std::vector<Mask2D> OraclePropagator::propagate(const VolumeF&, const RoundRequest& req) {
  std::vector<Mask2D> out;
  for (Index t : req.targets) out.push_back(truth_.slice(req.axis, t));
  return out;
}

const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::kBoundary: return "boundary";
    case StopReason::kEmpty: return "empty";
    case StopReason::kCap: return "round_cap";
  }
  return "?";
}

nlohmann::ordered_json RunReport::to_json() const {
  nlohmann::ordered_json j;
  j["axis"] = axis_name(axis);
  j["start_slice"] = start_slice;
  j["low_confidence"] = low_confidence;
  j["partial"] = partial;
  auto dirs = nlohmann::ordered_json::array();
  for (const auto& d : directions) {
    nlohmann::ordered_json dj;
    dj["direction"] = d.direction;
    dj["rounds"] = d.rounds;
    dj["stop_reason"] = stop_reason_name(d.stop);
    dj["guides"] = d.guides;
    dirs.push_back(std::move(dj));
  }
  j["directions"] = std::move(dirs);
  auto areas = nlohmann::ordered_json::array();
  for (const auto& [s, a] : slice_areas) areas.push_back({{"slice", s}, {"area", a}});
  j["slice_areas"] = std::move(areas);
  j["timings_ms"] = {{"initial", initial_ms}, {"propagation", propagation_ms}, {"total", total_ms}};
  return j;
}

RoundOutcome propagation_round(const VolumeF& volume, Axis axis, Index guide,
                               const Mask2D& guide_mask, const std::vector<Index>& targets,
                               SlicePropagator& propagator, const EngineConfig& cfg) {
  RoundRequest req{axis, guide, guide_mask, targets, context_box(guide_mask, cfg.context_scale)};
  req.crop.slice = guide;
  req.crop.axis = axis;
  RoundOutcome out;
  out.targets = targets;
  out.masks = propagator.propagate(volume, req);
  if (out.masks.size() != targets.size())
    throw std::logic_error("propagator returned " + std::to_string(out.masks.size()) +
                           " masks for " + std::to_string(targets.size()) + " targets");
  for (std::size_t i = targets.size(); i-- > 0;)
    if (count(out.masks[i]) >= cfg.min_area) {
      out.next_guide = targets[i];
      break;
    }
  return out;
}

namespace {

struct DirectionResult {
  DirectionReport report;
  std::vector<std::pair<Index, Mask2D>> slices;
  bool capped = false;
};

DirectionResult run_direction(const VolumeF& volume, Axis axis, Index start, const Mask2D& initial,
                              int direction, SlicePropagator& propagator, const EngineConfig& cfg) {
  DirectionResult res;
  res.report.direction = direction;
  if (count(initial) < cfg.min_area) {
    res.report.stop = StopReason::kEmpty;
    return res;
  }
  const double spacing = volume.spacing[static_cast<int>(axis)];
  const Index n = volume.slice_count(axis);
  // Slices already written in this direction lie between start and `reach`.
  Index reach = start;
  Index guide = start;
  // Isolated specks in a guiding mask widen the context crop and drag the
  // intensity window towards background, so they are dropped here. Written
  // masks keep them.
  auto clean = [&](const Mask2D& m) {
    return cfg.guide_keep_fraction > 0 ? drop_minor_components(m, cfg.guide_keep_fraction) : m;
  };
  Mask2D guide_mask = clean(initial);
  for (;;) {
    if (res.report.rounds >= cfg.max_rounds) {
      res.report.stop = StopReason::kCap;
      res.capped = true;
      break;
    }
    std::vector<Index> targets;
    for (Index t : slice_window(guide, direction, cfg.thickness_mm, spacing, n))
      if ((t - reach) * direction > 0) targets.push_back(t);
    if (targets.empty()) {
      res.report.stop = StopReason::kBoundary;
      break;
    }
    res.report.guides.push_back(guide);
    ++res.report.rounds;
    auto out = propagation_round(volume, axis, guide, guide_mask, targets, propagator, cfg);
    reach = targets.back();
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (out.next_guide == targets[i]) guide_mask = clean(out.masks[i]);
      res.slices.emplace_back(targets[i], std::move(out.masks[i]));
    }
    if (!out.next_guide) {
      res.report.stop = StopReason::kEmpty;
      break;
    }
    guide = *out.next_guide;
  }
  return res;
}

}  // namespace

SegmentationResult segment_volume(const VolumeF& volume, const Prompt& prompt,
                                  BoxSegmenter& boxes, SlicePropagator& propagator,
                                  const EngineConfig& cfg) {
  cfg.validate();
  const auto t0 = Clock::now();
  const Axis axis = prompt.axis;
  if (prompt.slice < 0 || prompt.slice >= volume.slice_count(axis))
    throw Error("bad_prompt", "prompt slice outside the volume");
  const auto [rows, cols] = volume.slice_extent(axis);

  SegmentationResult result;
  RunReport& rep = result.report;
  rep.axis = axis;
  rep.start_slice = prompt.slice;

  Mask2D initial;
  if (prompt.kind == PromptKind::kBox) {
    auto im = boxes.segment(volume, axis, prompt.slice, prompt.box);
    initial = std::move(im.mask);
    rep.low_confidence = im.low_confidence;
  } else {
    initial = prompt.sketch;
  }
  if (initial.rows() != rows || initial.cols() != cols)
    throw Error("bad_prompt", "initial mask extent differs from the slice");
  if (count(initial) == 0) throw Error("empty_initial_mask", "empty initial mask");
  rep.initial_ms = ms_since(t0);

  const auto t1 = Clock::now();
  auto run = [&](int direction) {
    return run_direction(volume, axis, prompt.slice, initial, direction, propagator, cfg);
  };
  DirectionResult fwd, bwd;
  if (cfg.parallel_directions) {
    auto later = std::async(std::launch::async, run, -1);
    fwd = run(+1);
    bwd = later.get();
  } else {
    fwd = run(+1);
    bwd = run(-1);
  }
  rep.propagation_ms = ms_since(t1);

  result.mask = Mask3D(volume.dims, volume.spacing, 0);
  result.mask.set_slice(axis, prompt.slice, initial);
  std::vector<std::pair<Index, Index>> areas{{prompt.slice, count(initial)}};
  for (auto* d : {&fwd, &bwd})
    for (const auto& [s, m] : d->slices) {
      result.mask.set_slice(axis, s, m);
      areas.emplace_back(s, count(m));
    }
  std::sort(areas.begin(), areas.end());
  rep.slice_areas = std::move(areas);
  rep.directions = {fwd.report, bwd.report};
  rep.partial = fwd.capped || bwd.capped;
  rep.total_ms = ms_since(t0);
  return result;
}

Index deviated_start(const Mask3D& truth, Axis axis, double deviation) {
  const auto areas = slice_areas(truth, axis);
  const Index largest = largest_foreground_slice(truth, axis);
  Index lo = 0, hi = static_cast<Index>(areas.size()) - 1;
  while (areas[lo] == 0) ++lo;
  while (areas[hi] == 0) --hi;
  const Index extent = hi - lo + 1;
  Index s = largest + static_cast<Index>(std::lround(deviation * static_cast<double>(extent)));
  s = std::clamp(s, lo, hi);
  while (areas[s] == 0) s += s > largest ? -1 : 1;
  return s;
}

namespace {

HarnessCell run_cell(const VolumeF& volume, const Mask3D& truth, Axis axis, Index start,
                     double parameter, BoxSegmenter& boxes, SlicePropagator& propagator,
                     const EngineConfig& cfg) {
  HarnessCell cell;
  cell.parameter = parameter;
  cell.start_slice = start;
  Prompt p;
  p.axis = axis;
  p.slice = start;
  p.kind = PromptKind::kBox;
  p.box = *bounding_box(truth.slice(axis, start));
  p.box.slice = start;
  p.box.axis = axis;
  try {
    cell.dsc = dsc(segment_volume(volume, p, boxes, propagator, cfg).mask, truth);
  } catch (const Error& e) {
    cell.error = e.what();
  }
  return cell;
}

}  // namespace

std::vector<HarnessCell> deviation_harness(const VolumeF& volume, const Mask3D& truth, Axis axis,
                                           const std::vector<double>& deviations,
                                           BoxSegmenter& boxes, SlicePropagator& propagator,
                                           const EngineConfig& cfg) {
  std::vector<HarnessCell> out;
  for (double d : deviations)
    out.push_back(run_cell(volume, truth, axis, deviated_start(truth, axis, d), d, boxes,
                           propagator, cfg));
  return out;
}

std::vector<HarnessCell> thickness_harness(const VolumeF& volume, const Mask3D& truth, Axis axis,
                                           const std::vector<double>& thicknesses_mm,
                                           BoxSegmenter& boxes, SlicePropagator& propagator,
                                           const EngineConfig& cfg) {
  const Index start = largest_foreground_slice(truth, axis);
  std::vector<HarnessCell> out;
  for (double t : thicknesses_mm) {
    EngineConfig c = cfg;
    c.thickness_mm = t;
    out.push_back(run_cell(volume, truth, axis, start, t, boxes, propagator, c));
  }
  return out;
}

}  // namespace pam
