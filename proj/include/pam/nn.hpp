#pragma once

#include "pam/autodiff.hpp"

#include <json.hpp>

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

namespace pam {

/// Shape of a six-stage (by default) UNet-style network.
struct NetConfig {
  int resolution = 64;
  std::vector<int> channels{8, 16, 32, 64, 64, 64};
  int attention_stages = 4;
  double leaky_slope = 0.01;

  static NetConfig reference() { return {224, {32, 64, 128, 256, 512, 512}, 4, 0.01}; }
  static NetConfig desk() { return {}; }

  int stages() const { return static_cast<int>(channels.size()); }
  int resolution_at(int stage) const { return resolution >> stage; }
  /// Throws std::invalid_argument when the resolution cannot be halved S-1 times.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static NetConfig from_json(const nlohmann::json& j);
  bool operator==(const NetConfig&) const = default;
};

/// Ordered, named parameter tensors. Storage addresses are stable.
template <typename Scalar>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar> tensor;
  };

  Tensor<Scalar>& add(const std::string& name, Shape shape);
  Tensor<Scalar>& get(const std::string& name);
  const Tensor<Scalar>& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  Index count() const;

  void set_requires_grad(bool on);
  void zero_grad();
  /// FNV-1a over names, shapes and raw values; also used as checkpoint identity.
  std::uint64_t hash() const;

 private:
  std::deque<Entry> entries_;
};

/// Fan-in scaled uniform (He) weights, zero biases, unit/zero norm affine.
template <typename Scalar>
void init_conv(ParameterSet<Scalar>& params, const std::string& name, int in, int out, int kernel,
               std::mt19937_64& rng, bool with_bias = true);
template <typename Scalar>
void init_transposed_conv(ParameterSet<Scalar>& params, const std::string& name, int in, int out,
                          std::mt19937_64& rng);
template <typename Scalar>
void init_norm(ParameterSet<Scalar>& params, const std::string& name, int channels);

/// conv3x3 -> instance norm -> LeakyReLU, parameters `<name>.conv.*`, `<name>.norm.*`.
template <typename Scalar>
Var<Scalar> conv_norm_act(Graph<Scalar>& g, ParameterSet<Scalar>& params, const std::string& name,
                          Var<Scalar> x, int stride, Scalar slope);
template <typename Scalar>
void init_conv_norm_act(ParameterSet<Scalar>& params, const std::string& name, int in, int out,
                        std::mt19937_64& rng);

/// Six-stage encoder: two conv_norm_act per stage, stride-2 entry into
/// stages 2..S, so level l has resolution R / 2^l.
template <typename Scalar>
struct Encoder {
  static void init(ParameterSet<Scalar>& params, const std::string& prefix, const NetConfig& cfg,
                   int in_channels, std::mt19937_64& rng);
  static std::vector<Var<Scalar>> forward(Graph<Scalar>& g, ParameterSet<Scalar>& params,
                                          const std::string& prefix, const NetConfig& cfg,
                                          Var<Scalar> x);
};

/// Packs single-channel R x R images into an (N, channels, R, R) tensor,
/// replicating the plane across channels.
template <typename Scalar, typename Image>
Tensor<Scalar> pack_images(const std::vector<Image>& images, int channels) {
  if (images.empty()) throw std::invalid_argument("pack_images: empty batch");
  const Index h = images.front().rows(), w = images.front().cols();
  Tensor<Scalar> t({static_cast<Index>(images.size()), channels, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].rows() != h || images[n].cols() != w)
      throw std::invalid_argument("pack_images: inconsistent image sizes");
    for (int c = 0; c < channels; ++c) {
      Scalar* dst = t.data() + (static_cast<Index>(n) * channels + c) * h * w;
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) dst[y * w + x] = static_cast<Scalar>(images[n](y, x));
    }
  }
  return t;
}

}  // namespace pam
