#include "pam/nn.hpp"

#include <cmath>
#include <cstring>

namespace pam {

void NetConfig::validate() const {
  if (channels.empty()) throw std::invalid_argument("net config: empty channel schedule");
  if (resolution <= 0) throw std::invalid_argument("net config: resolution must be positive");
  const int div = 1 << (stages() - 1);
  if (resolution % div != 0)
    throw std::invalid_argument("net config: resolution " + std::to_string(resolution) +
                                " not divisible by 2^" + std::to_string(stages() - 1));
  if (attention_stages < 1 || attention_stages > stages())
    throw std::invalid_argument("net config: attention stages out of range");
  for (int c : channels)
    if (c <= 0) throw std::invalid_argument("net config: channel counts must be positive");
}

nlohmann::ordered_json NetConfig::to_json() const {
  nlohmann::ordered_json j;
  j["resolution"] = resolution;
  j["channels"] = channels;
  j["attention_stages"] = attention_stages;
  j["leaky_slope"] = leaky_slope;
  return j;
}

NetConfig NetConfig::from_json(const nlohmann::json& j) {
  NetConfig c;
  c.resolution = j.at("resolution").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.attention_stages = j.value("attention_stages", 4);
  c.leaky_slope = j.value("leaky_slope", 0.01);
  c.validate();
  return c;
}

template <typename Scalar>
Tensor<Scalar>& ParameterSet<Scalar>::add(const std::string& name, Shape shape) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  entries_.push_back({name, Tensor<Scalar>(std::move(shape))});
  return entries_.back().tensor;
}

template <typename Scalar>
bool ParameterSet<Scalar>::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

template <typename Scalar>
Tensor<Scalar>& ParameterSet<Scalar>::get(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw std::out_of_range("unknown parameter " + name);
}

template <typename Scalar>
const Tensor<Scalar>& ParameterSet<Scalar>::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw std::out_of_range("unknown parameter " + name);
}

template <typename Scalar>
Index ParameterSet<Scalar>::count() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename Scalar>
void ParameterSet<Scalar>::set_requires_grad(bool on) {
  for (auto& e : entries_) e.tensor.requires_grad = on;
}

template <typename Scalar>
void ParameterSet<Scalar>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename Scalar>
std::uint64_t ParameterSet<Scalar>::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    for (Index d : e.tensor.shape()) mix(&d, sizeof d);
    mix(e.tensor.data(), sizeof(Scalar) * e.tensor.numel());
  }
  return h;
}

template <typename Scalar>
void init_conv(ParameterSet<Scalar>& params, const std::string& name, int in, int out, int kernel,
               std::mt19937_64& rng, bool with_bias) {
  auto& w = params.add(name + ".weight", {out, in, kernel, kernel});
  const double bound = std::sqrt(6.0 / (static_cast<double>(in) * kernel * kernel));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w.values()) v = static_cast<Scalar>(dist(rng));
  if (with_bias) params.add(name + ".bias", {out});
}

template <typename Scalar>
void init_transposed_conv(ParameterSet<Scalar>& params, const std::string& name, int in, int out,
                          std::mt19937_64& rng) {
  auto& w = params.add(name + ".weight", {in, out, 2, 2});
  // Each output pixel receives exactly one tap per input channel.
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w.values()) v = static_cast<Scalar>(dist(rng));
}

template <typename Scalar>
void init_norm(ParameterSet<Scalar>& params, const std::string& name, int channels) {
  params.add(name + ".weight", {channels}).array().setOnes();
  params.add(name + ".bias", {channels});
}

template <typename Scalar>
void init_conv_norm_act(ParameterSet<Scalar>& params, const std::string& name, int in, int out,
                        std::mt19937_64& rng) {
  init_conv(params, name + ".conv", in, out, 3, rng);
  init_norm(params, name + ".norm", out);
}

template <typename Scalar>
Var<Scalar> conv_norm_act(Graph<Scalar>& g, ParameterSet<Scalar>& params, const std::string& name,
                          Var<Scalar> x, int stride, Scalar slope) {
  auto w = g.parameter(params.get(name + ".conv.weight"));
  auto b = g.parameter(params.get(name + ".conv.bias"));
  auto y = conv2d(x, w, b, stride);
  y = instance_norm(y, g.parameter(params.get(name + ".norm.weight")),
                    g.parameter(params.get(name + ".norm.bias")), Scalar(1e-5));
  return leaky_relu(y, slope);
}

template <typename Scalar>
void Encoder<Scalar>::init(ParameterSet<Scalar>& params, const std::string& prefix,
                           const NetConfig& cfg, int in_channels, std::mt19937_64& rng) {
  int in = in_channels;
  for (int l = 0; l < cfg.stages(); ++l) {
    const std::string stage = prefix + ".stage" + std::to_string(l);
    init_conv_norm_act(params, stage + ".0", in, cfg.channels[l], rng);
    init_conv_norm_act(params, stage + ".1", cfg.channels[l], cfg.channels[l], rng);
    in = cfg.channels[l];
  }
}

template <typename Scalar>
std::vector<Var<Scalar>> Encoder<Scalar>::forward(Graph<Scalar>& g, ParameterSet<Scalar>& params,
                                                  const std::string& prefix, const NetConfig& cfg,
                                                  Var<Scalar> x) {
  const auto slope = static_cast<Scalar>(cfg.leaky_slope);
  std::vector<Var<Scalar>> levels;
  levels.reserve(cfg.stages());
  for (int l = 0; l < cfg.stages(); ++l) {
    const std::string stage = prefix + ".stage" + std::to_string(l);
    x = conv_norm_act(g, params, stage + ".0", x, l == 0 ? 1 : 2, slope);
    x = conv_norm_act(g, params, stage + ".1", x, 1, slope);
    levels.push_back(x);
  }
  return levels;
}

#define PAM_INSTANTIATE_NN(S)                                                                   \
  template class ParameterSet<S>;                                                               \
  template struct Encoder<S>;                                                                   \
  template void init_conv(ParameterSet<S>&, const std::string&, int, int, int, std::mt19937_64&, \
                          bool);                                                                \
  template void init_transposed_conv(ParameterSet<S>&, const std::string&, int, int,            \
                                     std::mt19937_64&);                                         \
  template void init_norm(ParameterSet<S>&, const std::string&, int);                           \
  template void init_conv_norm_act(ParameterSet<S>&, const std::string&, int, int,              \
                                   std::mt19937_64&);                                           \
  template Var<S> conv_norm_act(Graph<S>&, ParameterSet<S>&, const std::string&, Var<S>, int, S);

PAM_INSTANTIATE_NN(float)
PAM_INSTANTIATE_NN(double)

#undef PAM_INSTANTIATE_NN

}  // namespace pam
