#pragma once

#include "pam/box2mask.hpp"
#include "pam/preprocess.hpp"
#include "pam/propmask.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace pam {

enum class PromptKind { kBox, kSketch };

/// One-slice user prompt: a box or a sketched mask on slice `slice`.
struct Prompt {
  Axis axis = Axis::kZ;
  Index slice = 0;
  PromptKind kind = PromptKind::kBox;
  Box2D box;     ///< kBox, half-open pixel box
  Mask2D sketch; ///< kSketch, slice-sized
};

/// {"axis":"z","slice":i,"kind":"box","box":[x0,y0,x1,y1]} or
/// {"axis":"z","slice":i,"kind":"sketch","rle":"<runs>" | {width,height,runs}}.
/// Errors: bad_prompt.
Prompt parse_prompt(const nlohmann::json& j, const VolumeF& volume);
nlohmann::ordered_json prompt_to_json(const Prompt& p);

struct EngineConfig {
  double thickness_mm = 20.0;
  double context_scale = 1.5;
  Index min_area = kMinForegroundPixels;
  float threshold = 0.5f;
  int max_rounds = 256;
  bool parallel_directions = true;
  /// Components of a guiding mask smaller than this fraction of its largest
  /// component are dropped before the mask guides a round. 0 keeps everything.
  double guide_keep_fraction = 0.1;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  /// Missing keys keep their defaults.
  static EngineConfig from_json(const nlohmann::json& j);
};

/// Target indices g + d, g + 2d, ... up to floor(T / spacing) steps, clipped
/// to [0, count).
std::vector<Index> slice_window(Index guide, int direction, double thickness_mm,
                                double spacing_mm, Index count);

/// Keeps the 8-connected components whose pixel count is at least
/// `fraction` times that of the largest one.
Mask2D drop_minor_components(const Mask2D& mask, double fraction);

struct InitialMask {
  Mask2D mask;  ///< slice-sized
  bool low_confidence = false;
};

/// Turns a box prompt into the first guiding mask.
class BoxSegmenter {
 public:
  virtual ~BoxSegmenter() = default;
  virtual InitialMask segment(const VolumeF& volume, Axis axis, Index slice, const Box2D& box) = 0;
};

struct RoundRequest {
  Axis axis = Axis::kZ;
  Index guide = 0;
  Mask2D guide_mask;  ///< slice-sized
  std::vector<Index> targets;
  Box2D crop;  ///< shared ROI, slice coordinates
};

/// Predicts slice-sized masks for every target of a round. Called from two
/// threads at once (one per direction); implementations must not mutate
/// shared state.
class SlicePropagator {
 public:
  virtual ~SlicePropagator() = default;
  virtual std::vector<Mask2D> propagate(const VolumeF& volume, const RoundRequest& request) = 0;
};

/// Box2Mask inference on the box crop, pasted back into the slice.
class NetworkBoxSegmenter : public BoxSegmenter {
 public:
  NetworkBoxSegmenter(Box2MaskNet<float>& net, PercentileGrid grid = PercentileGrid::desk())
      : net_(net), grid_(std::move(grid)) {}
  InitialMask segment(const VolumeF& volume, Axis axis, Index slice, const Box2D& box) override;

 private:
  Box2MaskNet<float>& net_;
  PercentileGrid grid_;
};

/// PropMask inference: crop, normalize with guiding-region percentiles,
/// resize, one guide encoding, batched targets, bilinear resize back,
/// threshold, paste.
class NetworkPropagator : public SlicePropagator {
 public:
  explicit NetworkPropagator(PropMaskNet<float>& net, std::size_t batch = 16, float threshold = 0.5f)
      : net_(net), batch_(batch), threshold_(threshold) {}
  /// Intensity percentiles are taken over the guide mask eroded by this many
  /// pixels (the whole mask if erosion empties it). Predicted guides tend to
  /// leak onto background at the rim, which would pull the lower percentile
  /// down to background level.
  int norm_erosion = 1;
  std::vector<Mask2D> propagate(const VolumeF& volume, const RoundRequest& request) override;

 private:
  PropMaskNet<float>& net_;
  std::size_t batch_;
  float threshold_;
};

/// Ground-truth box segmenter: the mask slice restricted to the box.
class OracleBoxSegmenter : public BoxSegmenter {
 public:
  explicit OracleBoxSegmenter(const Mask3D& truth) : truth_(truth) {}
  InitialMask segment(const VolumeF& volume, Axis axis, Index slice, const Box2D& box) override;

 private:
  const Mask3D& truth_;
};

/// Ground-truth propagator; ignores the crop.
class OraclePropagator : public SlicePropagator {
 public:
  explicit OraclePropagator(const Mask3D& truth) : truth_(truth) {}
  std::vector<Mask2D> propagate(const VolumeF& volume, const RoundRequest& request) override;

 private:
  const Mask3D& truth_;
};

enum class StopReason { kBoundary, kEmpty, kCap };
const char* stop_reason_name(StopReason r);

struct DirectionReport {
  int direction = 1;
  int rounds = 0;
  StopReason stop = StopReason::kBoundary;
  std::vector<Index> guides;  ///< guiding slice of each round
};

struct RunReport {
  Axis axis = Axis::kZ;
  Index start_slice = 0;
  bool low_confidence = false;
  bool partial = false;  ///< a direction hit the round cap
  std::array<DirectionReport, 2> directions;
  std::vector<std::pair<Index, Index>> slice_areas;  ///< (slice, pixels) for every written slice
  double initial_ms = 0;
  double propagation_ms = 0;
  double total_ms = 0;

  nlohmann::ordered_json to_json() const;
};

struct SegmentationResult {
  Mask3D mask;
  RunReport report;
};

/// Initial guiding mask from the prompt, then bidirectional rounds until
/// the boundary, emptiness (no target reaches `min_area`) or the round cap.
/// Errors: empty_initial_mask, bad_prompt.
SegmentationResult segment_volume(const VolumeF& volume, const Prompt& prompt,
                                  BoxSegmenter& boxes, SlicePropagator& propagator,
                                  const EngineConfig& cfg);

/// One round of one direction, exposed for testing. Returns the masks
/// written (index -> slice-sized mask), in target order.
struct RoundOutcome {
  std::vector<Index> targets;
  std::vector<Mask2D> masks;
  std::optional<Index> next_guide;  ///< nullopt: direction deactivates
};
RoundOutcome propagation_round(const VolumeF& volume, Axis axis, Index guide,
                               const Mask2D& guide_mask, const std::vector<Index>& targets,
                               SlicePropagator& propagator, const EngineConfig& cfg);

struct HarnessCell {
  double parameter = 0;  ///< deviation fraction or thickness in mm
  Index start_slice = 0;
  double dsc = 0;
  std::string error;  ///< non-empty when the run failed (dsc = 0)
};

/// Start slice = largest slice + round(p * object extent), clamped into the
/// object; box prompt = tight box of the truth on that slice.
Index deviated_start(const Mask3D& truth, Axis axis, double deviation);

std::vector<HarnessCell> deviation_harness(const VolumeF& volume, const Mask3D& truth, Axis axis,
                                           const std::vector<double>& deviations,
                                           BoxSegmenter& boxes, SlicePropagator& propagator,
                                           const EngineConfig& cfg);
std::vector<HarnessCell> thickness_harness(const VolumeF& volume, const Mask3D& truth, Axis axis,
                                           const std::vector<double>& thicknesses_mm,
                                           BoxSegmenter& boxes, SlicePropagator& propagator,
                                           const EngineConfig& cfg);

inline const std::vector<double>& default_deviations() {
  static const std::vector<double> d{0.0, -0.05, 0.05, -0.10, 0.10, -0.15, 0.15, -0.20, 0.20};
  return d;
}
inline const std::vector<double>& default_thicknesses() {
  static const std::vector<double> t{10.0, 20.0, 30.0, 40.0};
  return t;
}

}  // namespace pam
