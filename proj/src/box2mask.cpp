#include "pam/box2mask.hpp"

namespace pam {

template <typename Scalar>
Box2MaskNet<Scalar>::Box2MaskNet(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const int s = cfg_.stages();
  const auto& ch = cfg_.channels;
  Encoder<Scalar>::init(params_, "enc", cfg_, kInputChannels, rng);
  for (int l = s - 2; l >= 0; --l) {
    init_transposed_conv(params_, "dec.up" + std::to_string(l), ch[l + 1], ch[l], rng);
    init_conv_norm_act(params_, "dec.stage" + std::to_string(l) + ".0", 2 * ch[l], ch[l], rng);
    init_conv_norm_act(params_, "dec.stage" + std::to_string(l) + ".1", ch[l], ch[l], rng);
  }
  for (int l = 0; l < s; ++l) init_conv(params_, "head" + std::to_string(l), ch[l], 1, 1, rng);
}

template <typename Scalar>
std::vector<Var<Scalar>> Box2MaskNet<Scalar>::forward(Graph<Scalar>& g, Var<Scalar> image) {
  const Shape& is = image.shape();
  if (is.size() != 4 || is[1] != kInputChannels || is[2] != cfg_.resolution ||
      is[3] != cfg_.resolution)
    throw std::invalid_argument("box2mask: expected (N, 3, " + std::to_string(cfg_.resolution) +
                                ", " + std::to_string(cfg_.resolution) + ") input, got " +
                                shape_str(is));
  const int s = cfg_.stages();
  const auto slope = static_cast<Scalar>(cfg_.leaky_slope);
  auto head = [&](int l, Var<Scalar> x) {
    const std::string name = "head" + std::to_string(l);
    return sigmoid(conv2d(x, g.parameter(params_.get(name + ".weight")),
                          g.parameter(params_.get(name + ".bias")), 1));
  };

  const auto enc = Encoder<Scalar>::forward(g, params_, "enc", cfg_, image);
  std::vector<Var<Scalar>> outs(s);
  Var<Scalar> x = enc[s - 1];
  outs[s - 1] = head(s - 1, x);
  for (int l = s - 2; l >= 0; --l) {
    const std::string stage = "dec.stage" + std::to_string(l);
    auto up = transposed_conv2d(x, g.parameter(params_.get("dec.up" + std::to_string(l) + ".weight")));
    x = concat_channels(up, enc[l]);
    x = conv_norm_act(g, params_, stage + ".0", x, 1, slope);
    x = conv_norm_act(g, params_, stage + ".1", x, 1, slope);
    outs[l] = head(l, x);
  }
  return outs;
}

template <typename Scalar>
std::vector<Image> Box2MaskNet<Scalar>::predict(const std::vector<Image>& images) {
  std::vector<Image> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 16;
  const Index r = cfg_.resolution;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::vector<Image> chunk(images.begin() + start,
                                   images.begin() + std::min(images.size(), start + kChunk));
    Graph<Scalar> g(false);
    auto outs = forward(g, g.input(pack_images<Scalar>(chunk, kInputChannels)));
    const auto& p = outs[0].value();
    for (std::size_t n = 0; n < chunk.size(); ++n) {
      Image img(r, r);
      for (Index i = 0; i < r * r; ++i)
        img.data()[i] = static_cast<float>(p[static_cast<Index>(n) * r * r + i]);
      out.push_back(std::move(img));
    }
  }
  return out;
}

template <typename Scalar>
Var<Scalar> box2mask_loss(const std::vector<Var<Scalar>>& outputs, const Tensor<Scalar>& target,
                          Scalar eps) {
  if (outputs.empty()) throw std::invalid_argument("box2mask_loss: no outputs");
  Graph<Scalar>& g = *outputs.front().graph;
  Var<Scalar> total;
  for (const auto& p : outputs) {
    const Tensor<Scalar> m = resize_nearest(target, p.dim(2), p.dim(3));
    auto l = soft_dice_loss(p, g.input(m), eps, DiceReduction::kPerSample);
    total = total.valid() ? add(total, l) : l;
  }
  return scale(total, Scalar(1) / static_cast<Scalar>(outputs.size()));
}

PercentileGrid PercentileGrid::reference() {
  PercentileGrid g;
  for (int p = 5; p <= 40; ++p) g.lower.push_back(p);
  for (int k = 0; k <= 10; ++k) g.upper.push_back(90.0 + 0.5 * k);
  return g;
}

PercentileGrid PercentileGrid::desk() { return {{5, 12, 19, 26, 33, 40}, {90, 92.5, 95}}; }

Box2MaskResult box2mask_infer(const Image& roi, const ProbabilityModel& model,
                              const PercentileGrid& grid, int resolution, float level) {
  if (grid.size() == 0) throw std::invalid_argument("box2mask_infer: empty percentile grid");
  if (roi.size() == 0) throw Error("empty_roi", "box2mask_infer: empty ROI");
  const Image resized = resize_image(roi, resolution, resolution);
  const SortedSample sample(std::vector<double>(roi.data(), roi.data() + roi.size()));

  std::vector<Image> candidates;
  candidates.reserve(grid.size());
  for (double lo : grid.lower)
    for (double hi : grid.upper) {
      NormParams p{sample.percentile(lo), sample.percentile(hi), false};
      p.degenerate = !(p.v_max > p.v_min);
      candidates.push_back(apply_normalization(resized, p));
    }
  const auto probs = model(candidates);
  Image mean = Image::Zero(resolution, resolution);
  for (const auto& p : probs) mean += p;
  mean /= static_cast<float>(probs.size());

  Box2MaskResult result;
  const Mask2D preliminary = threshold(resize_image(mean, roi.rows(), roi.cols()), level);
  if (count(preliminary) == 0) {
    result.mask = preliminary;
    result.low_confidence = true;
    return result;
  }
  result.params = norm_params(roi, preliminary);
  const auto final_prob = model({apply_normalization(resized, result.params)});
  result.mask = threshold(resize_image(final_prob.front(), roi.rows(), roi.cols()), level);
  return result;
}

template class Box2MaskNet<float>;
template class Box2MaskNet<double>;
template Var<float> box2mask_loss(const std::vector<Var<float>>&, const Tensor<float>&, float);
template Var<double> box2mask_loss(const std::vector<Var<double>>&, const Tensor<double>&, double);

}  // namespace pam
