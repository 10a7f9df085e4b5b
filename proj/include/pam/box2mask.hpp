#pragma once

#include "pam/nn.hpp"
#include "pam/preprocess.hpp"

#include <functional>
#include <vector>

namespace pam {

/// Box-cropped ROI image -> foreground probability, with a sigmoid head at
/// every decoder resolution (deep supervision).
///
/// Parameters:
///   enc.stage{l}.{0,1}.{conv,norm}.*   encoder, stride-2 entry for l >= 1
///   dec.up{l}.weight                   2x2 transposed conv, level l+1 -> l
///   dec.stage{l}.{0,1}.{conv,norm}.*   decoder blocks on [up, skip]
///   head{l}.{weight,bias}              1x1 conv -> 1 channel
/// Head S-1 reads the bottleneck directly.
template <typename Scalar>
class Box2MaskNet {
 public:
  static constexpr int kInputChannels = 3;

  explicit Box2MaskNet(NetConfig cfg = NetConfig::desk(), std::uint64_t seed = 0);

  const NetConfig& config() const { return cfg_; }
  ParameterSet<Scalar>& params() { return params_; }
  const ParameterSet<Scalar>& params() const { return params_; }

  /// image: (N, 3, R, R) in [0, 1]. Returns S probability maps, index s at
  /// resolution R / 2^s.
  std::vector<Var<Scalar>> forward(Graph<Scalar>& g, Var<Scalar> image);

  /// Inference-only: full-resolution probability maps for a batch of
  /// single-channel R x R images.
  std::vector<Image> predict(const std::vector<Image>& images);

 private:
  NetConfig cfg_;
  ParameterSet<Scalar> params_;
};

/// Deep-supervision soft dice: mean over heads of per-sample dice, targets
/// nearest-downsampled to each head. `target` is (N, 1, R, R).
template <typename Scalar>
Var<Scalar> box2mask_loss(const std::vector<Var<Scalar>>& outputs, const Tensor<Scalar>& target,
                          Scalar eps = Scalar(1e-6));

/// (pmin, pmax) percentile pairs for the candidate normalization search.
struct PercentileGrid {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t size() const { return lower.size() * upper.size(); }
  /// 5..40 step 1 by 90..95 step 0.5 (396 candidates).
  static PercentileGrid reference();
  /// 6 x 3 subsample of the reference grid.
  static PercentileGrid desk();
};

/// Maps normalized single-channel images (all R x R) to probability maps of
/// the same size.
using ProbabilityModel = std::function<std::vector<Image>(const std::vector<Image>&)>;

struct Box2MaskResult {
  Mask2D mask;  ///< crop-sized
  NormParams params;
  bool low_confidence = false;
};

/// Normalization search: average candidate probability maps, threshold,
/// re-derive (v_min, v_max) from predicted foreground, predict again.
Box2MaskResult box2mask_infer(const Image& roi, const ProbabilityModel& model,
                              const PercentileGrid& grid, int resolution, float level = 0.5f);

}  // namespace pam
