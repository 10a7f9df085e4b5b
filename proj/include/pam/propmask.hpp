#pragma once

#include "pam/nn.hpp"
#include "pam/volume.hpp"

#include <vector>

namespace pam {

/// Single-head cross-attention between NCHW feature maps.
/// keys/values: (B, C, H, W); queries: (B * n, C, H, W), query i attending to
/// key/value batch i / n. Returns softmax(Q K^T / sqrt(C)) V as (B * n, C, H, W).
template <typename Scalar>
Var<Scalar> cross_attend(Var<Scalar> keys, Var<Scalar> queries, Var<Scalar> values);

/// Guiding-slice features that every adjacent slice of a task attends to.
/// Only the attention levels are populated.
template <typename Scalar>
struct GuideFeatures {
  std::vector<Tensor<Scalar>> keys;
  std::vector<Tensor<Scalar>> values;
};

/// Transfers a guiding slice's mask to adjacent slices.
///
/// Parameters:
///   img_enc.*          shared encoder for guiding and adjacent slices (3 ch)
///   mask_enc.*         mask encoder (1 ch)
///   dec.up{l}.weight   2x2 transposed conv, level l+1 -> l
///   dec.stage{l}.*     two conv_norm_act blocks on [up, skip]
///   head.{weight,bias} 1x1 conv -> 1 channel, sigmoid
///
/// Attention runs at the lowest `attention_stages` levels; the decoder
/// starts from the coarsest attention output and concatenates attention
/// outputs at the remaining attention levels and adjacent-slice encoder
/// features above them.
template <typename Scalar>
class PropMaskNet {
 public:
  static constexpr int kImageChannels = 3;
  static constexpr int kMaskChannels = 1;

  explicit PropMaskNet(NetConfig cfg = NetConfig::desk(), std::uint64_t seed = 0);

  const NetConfig& config() const { return cfg_; }
  ParameterSet<Scalar>& params() { return params_; }
  const ParameterSet<Scalar>& params() const { return params_; }

  /// Lowest level that carries attention.
  int first_attention_level() const { return cfg_.stages() - cfg_.attention_stages; }

  std::vector<Var<Scalar>> encode_image(Graph<Scalar>& g, Var<Scalar> slices);
  std::vector<Var<Scalar>> encode_mask(Graph<Scalar>& g, Var<Scalar> masks);

  /// guide: (T, 3, R, R); prompt: (T, 1, R, R); adjacent: (T * n, 3, R, R),
  /// grouped by task. Returns (T * n, 1, R, R) probabilities.
  Var<Scalar> forward(Graph<Scalar>& g, Var<Scalar> guide, Var<Scalar> prompt,
                      Var<Scalar> adjacent);

  /// Inference: encode one guiding pair once.
  GuideFeatures<Scalar> encode_guide(const Image& guide, const Image& prompt);
  /// Probability maps for adjacent slices against precomputed guide
  /// features, evaluated in chunks of `batch`.
  std::vector<Image> predict(const GuideFeatures<Scalar>& guide,
                             const std::vector<Image>& adjacent, std::size_t batch = 16);

 private:
  Var<Scalar> attend_and_decode(Graph<Scalar>& g, const std::vector<Var<Scalar>>& keys,
                                const std::vector<Var<Scalar>>& values, Var<Scalar> adjacent);
  void check_input(const Var<Scalar>& x, int channels, const char* what) const;

  NetConfig cfg_;
  ParameterSet<Scalar> params_;
};

/// Single-output soft dice. Batch reduction pools every pixel of the batch
/// into one dice, which keeps a gradient on empty targets.
template <typename Scalar>
Var<Scalar> propmask_loss(Var<Scalar> pred, const Tensor<Scalar>& target,
                          DiceReduction reduction = DiceReduction::kBatch,
                          Scalar eps = Scalar(1e-6));

}  // namespace pam
