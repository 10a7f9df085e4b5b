#include "pam/propmask.hpp"

#include <cmath>

namespace pam {

template <typename Scalar>
Var<Scalar> cross_attend(Var<Scalar> keys, Var<Scalar> queries, Var<Scalar> values) {
  const Shape& ks = keys.shape();
  const Shape& qs = queries.shape();
  if (ks.size() != 4 || qs.size() != 4 || values.shape() != ks)
    throw std::invalid_argument("cross_attend: keys " + shape_str(ks) + ", values " +
                                shape_str(values.shape()) + " must be equal rank-4 maps");
  if (qs[1] != ks[1] || qs[2] != ks[2] || qs[3] != ks[3])
    throw std::invalid_argument("cross_attend: queries " + shape_str(qs) +
                                " do not match keys " + shape_str(ks));
  if (ks[0] == 0 || qs[0] % ks[0] != 0)
    throw std::invalid_argument("cross_attend: query batch " + std::to_string(qs[0]) +
                                " is not a multiple of key batch " + std::to_string(ks[0]));
  const auto k = flatten_tokens(keys);
  const auto q = flatten_tokens(queries);
  const auto v = flatten_tokens(values);
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(ks[1]));
  const auto attn = softmax_rows(scale(matmul(q, k, true), inv_sqrt_d));
  return unflatten_tokens(matmul(attn, v), qs[2], qs[3]);
}

template <typename Scalar>
PropMaskNet<Scalar>::PropMaskNet(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const int s = cfg_.stages();
  const auto& ch = cfg_.channels;
  Encoder<Scalar>::init(params_, "img_enc", cfg_, kImageChannels, rng);
  Encoder<Scalar>::init(params_, "mask_enc", cfg_, kMaskChannels, rng);
  for (int l = s - 2; l >= 0; --l) {
    init_transposed_conv(params_, "dec.up" + std::to_string(l), ch[l + 1], ch[l], rng);
    init_conv_norm_act(params_, "dec.stage" + std::to_string(l) + ".0", 2 * ch[l], ch[l], rng);
    init_conv_norm_act(params_, "dec.stage" + std::to_string(l) + ".1", ch[l], ch[l], rng);
  }
  init_conv(params_, "head", ch[0], 1, 1, rng);
}

template <typename Scalar>
void PropMaskNet<Scalar>::check_input(const Var<Scalar>& x, int channels, const char* what) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != channels || s[2] != cfg_.resolution || s[3] != cfg_.resolution)
    throw std::invalid_argument(std::string("propmask: ") + what + " must be (N, " +
                                std::to_string(channels) + ", " +
                                std::to_string(cfg_.resolution) + ", " +
                                std::to_string(cfg_.resolution) + "), got " + shape_str(s));
}

template <typename Scalar>
std::vector<Var<Scalar>> PropMaskNet<Scalar>::encode_image(Graph<Scalar>& g, Var<Scalar> slices) {
  check_input(slices, kImageChannels, "image");
  return Encoder<Scalar>::forward(g, params_, "img_enc", cfg_, slices);
}

template <typename Scalar>
std::vector<Var<Scalar>> PropMaskNet<Scalar>::encode_mask(Graph<Scalar>& g, Var<Scalar> masks) {
  check_input(masks, kMaskChannels, "mask");
  return Encoder<Scalar>::forward(g, params_, "mask_enc", cfg_, masks);
}

template <typename Scalar>
Var<Scalar> PropMaskNet<Scalar>::attend_and_decode(Graph<Scalar>& g,
                                                   const std::vector<Var<Scalar>>& keys,
                                                   const std::vector<Var<Scalar>>& values,
                                                   Var<Scalar> adjacent) {
  const int s = cfg_.stages();
  const int first = first_attention_level();
  const auto slope = static_cast<Scalar>(cfg_.leaky_slope);
  const auto queries = encode_image(g, adjacent);

  std::vector<Var<Scalar>> skips(s);
  for (int l = 0; l < s; ++l)
    skips[l] = l >= first ? cross_attend(keys[l], queries[l], values[l]) : queries[l];

  Var<Scalar> x = skips[s - 1];
  for (int l = s - 2; l >= 0; --l) {
    const std::string stage = "dec.stage" + std::to_string(l);
    auto up = transposed_conv2d(x, g.parameter(params_.get("dec.up" + std::to_string(l) + ".weight")));
    x = concat_channels(up, skips[l]);
    x = conv_norm_act(g, params_, stage + ".0", x, 1, slope);
    x = conv_norm_act(g, params_, stage + ".1", x, 1, slope);
  }
  return sigmoid(conv2d(x, g.parameter(params_.get("head.weight")),
                        g.parameter(params_.get("head.bias")), 1));
}

template <typename Scalar>
Var<Scalar> PropMaskNet<Scalar>::forward(Graph<Scalar>& g, Var<Scalar> guide, Var<Scalar> prompt,
                                         Var<Scalar> adjacent) {
  if (guide.dim(0) != prompt.dim(0))
    throw std::invalid_argument("propmask: " + std::to_string(guide.dim(0)) +
                                " guiding slices but " + std::to_string(prompt.dim(0)) +
                                " prompts");
  check_input(adjacent, kImageChannels, "adjacent");
  const auto k = encode_image(g, guide);
  const auto v = encode_mask(g, prompt);
  return attend_and_decode(g, k, v, adjacent);
}

template <typename Scalar>
GuideFeatures<Scalar> PropMaskNet<Scalar>::encode_guide(const Image& guide, const Image& prompt) {
  Graph<Scalar> g(false);
  const auto k = encode_image(g, g.input(pack_images<Scalar>(std::vector<Image>{guide}, kImageChannels)));
  const auto v = encode_mask(g, g.input(pack_images<Scalar>(std::vector<Image>{prompt}, kMaskChannels)));
  GuideFeatures<Scalar> out;
  out.keys.resize(cfg_.stages());
  out.values.resize(cfg_.stages());
  for (int l = first_attention_level(); l < cfg_.stages(); ++l) {
    out.keys[l] = k[l].value();
    out.values[l] = v[l].value();
  }
  return out;
}

template <typename Scalar>
std::vector<Image> PropMaskNet<Scalar>::predict(const GuideFeatures<Scalar>& guide,
                                                const std::vector<Image>& adjacent,
                                                std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("propmask: batch must be positive");
  const int s = cfg_.stages();
  if (static_cast<int>(guide.keys.size()) != s || static_cast<int>(guide.values.size()) != s)
    throw std::invalid_argument("propmask: guide features do not match the configuration");
  const Index r = cfg_.resolution;
  std::vector<Image> out;
  out.reserve(adjacent.size());
  for (std::size_t start = 0; start < adjacent.size(); start += batch) {
    const std::vector<Image> chunk(adjacent.begin() + start,
                                   adjacent.begin() + std::min(adjacent.size(), start + batch));
    Graph<Scalar> g(false);
    std::vector<Var<Scalar>> k(s), v(s);
    for (int l = first_attention_level(); l < s; ++l) {
      k[l] = g.input(guide.keys[l]);
      v[l] = g.input(guide.values[l]);
    }
    const auto p = attend_and_decode(g, k, v,
                                     g.input(pack_images<Scalar>(chunk, kImageChannels)));
    for (std::size_t n = 0; n < chunk.size(); ++n) {
      Image img(r, r);
      for (Index i = 0; i < r * r; ++i)
        img.data()[i] = static_cast<float>(p.value()[static_cast<Index>(n) * r * r + i]);
      out.push_back(std::move(img));
    }
  }
  return out;
}

template <typename Scalar>
Var<Scalar> propmask_loss(Var<Scalar> pred, const Tensor<Scalar>& target, DiceReduction reduction,
                          Scalar eps) {
  return soft_dice_loss(pred, pred.graph->input(target), eps, reduction);
}

#define PAM_INSTANTIATE_PROPMASK(S)                                                      \
  template class PropMaskNet<S>;                                                         \
  template Var<S> cross_attend(Var<S>, Var<S>, Var<S>);                                  \
  template Var<S> propmask_loss(Var<S>, const Tensor<S>&, DiceReduction, S);

PAM_INSTANTIATE_PROPMASK(float)
PAM_INSTANTIATE_PROPMASK(double)

#undef PAM_INSTANTIATE_PROPMASK

}  // namespace pam
