#include "pam/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pam {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

namespace {

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMat<Scalar>>;
template <typename Scalar>
using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using ArrMap = Eigen::Map<Arr<Scalar>>;
template <typename Scalar>
using ConstArrMap = Eigen::Map<const Arr<Scalar>>;

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

void require_rank(const std::string& op, const Shape& s, std::size_t rank) {
  if (s.size() != rank)
    shape_error(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

template <typename Scalar>
Graph<Scalar>& graph_of(const std::string& op, std::initializer_list<Var<Scalar>> vars) {
  Graph<Scalar>* g = nullptr;
  for (const auto& v : vars) {
    if (!v.valid()) continue;
    if (g && v.graph != g) shape_error(op, "operands belong to different graphs");
    g = v.graph;
  }
  if (!g) shape_error(op, "no valid operand");
  return *g;
}

template <typename Scalar>
void accumulate(Graph<Scalar>& g, int id, const Scalar* src) {
  if (!g.needs_grad(id)) return;
  auto& dst = g.grad(id);
  ArrMap<Scalar>(dst.data(), dst.size()) += ConstArrMap<Scalar>(src, dst.size());
}

// Plain loops: Eigen's vectorized reductions peel by buffer alignment, which
// would make results depend on a sample's position in the batch.
template <typename Scalar>
Scalar ordered_sum(const Scalar* p, Index n) {
  Scalar acc = 0;
  for (Index i = 0; i < n; ++i) acc += p[i];
  return acc;
}

template <typename Scalar>
Scalar ordered_dot(const Scalar* a, const Scalar* b, Index n) {
  Scalar acc = 0;
  for (Index i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

struct ConvGeometry {
  Index n, c, h, w, o, k, stride, pad, ho, wo;
};

// Patch matrix, rows (c, ky, kx), columns (n, oy, ox).
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* cols) {
  const Index cols_per_row = g.n * g.ho * g.wo;
  for (Index c = 0; c < g.c; ++c)
    for (Index ky = 0; ky < g.k; ++ky)
      for (Index kx = 0; kx < g.k; ++kx) {
        Scalar* row = cols + ((c * g.k + ky) * g.k + kx) * cols_per_row;
        for (Index n = 0; n < g.n; ++n) {
          const Scalar* plane = x + (n * g.c + c) * g.h * g.w;
          for (Index oy = 0; oy < g.ho; ++oy) {
            Scalar* dst = row + (n * g.ho + oy) * g.wo;
            const Index iy = oy * g.stride + ky - g.pad;
            if (iy < 0 || iy >= g.h) {
              std::fill(dst, dst + g.wo, Scalar(0));
              continue;
            }
            const Scalar* src = plane + iy * g.w;
            for (Index ox = 0; ox < g.wo; ++ox) {
              const Index ix = ox * g.stride + kx - g.pad;
              dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : Scalar(0);
            }
          }
        }
      }
}

template <typename Scalar>
void col2im(const Scalar* cols, const ConvGeometry& g, Scalar* dx) {
  const Index cols_per_row = g.n * g.ho * g.wo;
  for (Index c = 0; c < g.c; ++c)
    for (Index ky = 0; ky < g.k; ++ky)
      for (Index kx = 0; kx < g.k; ++kx) {
        const Scalar* row = cols + ((c * g.k + ky) * g.k + kx) * cols_per_row;
        for (Index n = 0; n < g.n; ++n) {
          Scalar* plane = dx + (n * g.c + c) * g.h * g.w;
          for (Index oy = 0; oy < g.ho; ++oy) {
            const Index iy = oy * g.stride + ky - g.pad;
            if (iy < 0 || iy >= g.h) continue;
            const Scalar* src = row + (n * g.ho + oy) * g.wo;
            Scalar* dst = plane + iy * g.w;
            for (Index ox = 0; ox < g.wo; ++ox) {
              const Index ix = ox * g.stride + kx - g.pad;
              if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
            }
          }
        }
      }
}

struct LinearTaps {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};

LinearTaps bilinear_taps(Index in, Index out) {
  LinearTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min<Index>(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

std::vector<Index> nearest_taps(Index in, Index out) {
  std::vector<Index> idx(out);
  for (Index i = 0; i < out; ++i) idx[i] = std::min<Index>((i * in) / out, in - 1);
  return idx;
}

void check_resize(const Shape& s, Index height, Index width, const char* op) {
  require_rank(op, s, 4);
  if (height <= 0 || width <= 0)
    shape_error(op, "target size must be positive, got " + std::to_string(height) + "x" +
                        std::to_string(width));
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

template <typename Scalar>
Var<Scalar> Graph<Scalar>::input(Tensor<Scalar> value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::parameter(Tensor<Scalar>& t) {
  Node node;
  node.external = &t;
  node.needs_grad = record_ && t.requires_grad;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::record(Tensor<Scalar> value, std::vector<int> inputs,
                                  Backward backward) {
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (int i : inputs) node.needs_grad = node.needs_grad || nodes_[i].needs_grad;
    if (node.needs_grad) {
      node.inputs = std::move(inputs);
      node.backward = std::move(backward);
    }
  }
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename Scalar>
const Tensor<Scalar>& Graph<Scalar>::value(int id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

template <typename Scalar>
std::vector<Scalar>& Graph<Scalar>::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).numel(), Scalar(0));
  return n.grad;
}

template <typename Scalar>
void Graph<Scalar>::backward(Var<Scalar> loss) {
  if (!record_) throw std::logic_error("backward: graph was built without recording");
  if (loss.graph != this || loss.id < 0 || nodes_.empty())
    throw std::logic_error("backward: loss was not recorded on this graph");
  if (consumed_) throw std::logic_error("backward: graph already consumed");
  if (value(loss.id).numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(value(loss.id).shape()));
  consumed_ = true;
  if (!nodes_[loss.id].needs_grad) return;
  grad(loss.id)[0] = Scalar(1);
  for (int i = loss.id; i >= 0; --i) {
    Node& node = nodes_[i];
    if (node.grad.empty()) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.external && node.external->requires_grad) {
      node.external->grad_array() += ConstArrMap<Scalar>(node.grad.data(), node.grad.size());
    }
  }
}

// ---------------------------------------------------------------------------
// Convolutions

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, int stride) {
  static const std::string op = "conv2d";
  Graph<Scalar>& g = graph_of<Scalar>(op, {x, weight, bias});
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require_rank(op, xs, 4);
  require_rank(op, ws, 4);
  const Index k = ws[2];
  if (ws[3] != k || k < 1 || k > 3) shape_error(op, "unsupported kernel " + shape_str(ws));
  if (stride != 1 && stride != 2) shape_error(op, "stride must be 1 or 2");
  if (ws[1] != xs[1])
    shape_error(op, "input channels " + std::to_string(xs[1]) + " != weight channels " +
                        std::to_string(ws[1]));
  ConvGeometry geo{xs[0], xs[1], xs[2], xs[3], ws[0], k, stride, k % 2 == 1 ? (k - 1) / 2 : 0, 0, 0};
  geo.ho = (geo.h + 2 * geo.pad - k) / stride + 1;
  geo.wo = (geo.w + 2 * geo.pad - k) / stride + 1;
  if (geo.h + 2 * geo.pad - k < 0 || geo.w + 2 * geo.pad - k < 0 || geo.ho <= 0 || geo.wo <= 0)
    shape_error(op, "non-positive output size for input " + shape_str(xs));
  if (bias.valid() && (bias.value().rank() != 1 || bias.dim(0) != geo.o))
    shape_error(op, "bias shape " + shape_str(bias.shape()) + " does not match " +
                        std::to_string(geo.o) + " outputs");

  const Index ckk = geo.c * k * k;
  const Index npos = geo.n * geo.ho * geo.wo;
  const Index plane = geo.ho * geo.wo;
  auto cols = std::make_shared<RowMat<Scalar>>(ckk, npos);
  im2col(x.value().data(), geo, cols->data());
  ConstRowMap<Scalar> wm(weight.value().data(), geo.o, ckk);

  // One product per sample so a sample's output never depends on its batch.
  Tensor<Scalar> out({geo.n, geo.o, geo.ho, geo.wo});
  const Scalar* b = bias.valid() ? bias.value().data() : nullptr;
  using Strided = Eigen::Map<const RowMat<Scalar>, 0, Eigen::OuterStride<>>;
  for (Index n = 0; n < geo.n; ++n) {
    RowMap<Scalar> y(out.data() + n * geo.o * plane, geo.o, plane);
    y.noalias() = wm * Strided(cols->data() + n * plane, ckk, plane, Eigen::OuterStride<>(npos));
    if (b)
      for (Index o = 0; o < geo.o; ++o) y.row(o).array() += b[o];
  }

  const int xi = x.id, wi = weight.id, bi = bias.valid() ? bias.id : -1;
  std::vector<int> inputs{xi, wi};
  if (bi >= 0) inputs.push_back(bi);
  return g.record(std::move(out), inputs,
                  [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
                    RowMat<Scalar> dy(geo.o, npos);
                    for (Index n = 0; n < geo.n; ++n)
                      for (Index o = 0; o < geo.o; ++o)
                        std::copy_n(gout.data() + (n * geo.o + o) * plane, plane,
                                    dy.data() + o * npos + n * plane);
                    if (gr.needs_grad(wi)) {
                      RowMap<Scalar>(gr.grad(wi).data(), geo.o, ckk).noalias() +=
                          dy * cols->transpose();
                    }
                    if (bi >= 0 && gr.needs_grad(bi)) {
                      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(gr.grad(bi).data(),
                                                                          geo.o) +=
                          dy.rowwise().sum();
                    }
                    if (gr.needs_grad(xi)) {
                      ConstRowMap<Scalar> w(gr.value(wi).data(), geo.o, ckk);
                      RowMat<Scalar> dcols = w.transpose() * dy;
                      col2im(dcols.data(), geo, gr.grad(xi).data());
                    }
                  });
}

template <typename Scalar>
Var<Scalar> transposed_conv2d(Var<Scalar> x, Var<Scalar> weight) {
  static const std::string op = "transposed_conv2d";
  Graph<Scalar>& g = graph_of<Scalar>(op, {x, weight});
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require_rank(op, xs, 4);
  require_rank(op, ws, 4);
  if (ws[2] != 2 || ws[3] != 2) shape_error(op, "kernel must be 2x2, got " + shape_str(ws));
  if (ws[0] != xs[1])
    shape_error(op, "input channels " + std::to_string(xs[1]) + " != weight " + shape_str(ws));
  const Index n = xs[0], c = xs[1], h = xs[2], w = xs[3], o = ws[1];
  const Index hw = h * w;

  ConstRowMap<Scalar> wm(weight.value().data(), c, o * 4);
  Tensor<Scalar> out({n, o, 2 * h, 2 * w});
  RowMat<Scalar> z(o * 4, hw);
  for (Index s = 0; s < n; ++s) {
    z.noalias() = wm.transpose() * ConstRowMap<Scalar>(x.value().data() + s * c * hw, c, hw);
    Scalar* y = out.data() + s * o * 4 * hw;
    for (Index oc = 0; oc < o; ++oc)
      for (Index a = 0; a < 2; ++a)
        for (Index b = 0; b < 2; ++b) {
          const Scalar* src = z.data() + (oc * 4 + a * 2 + b) * hw;
          for (Index i = 0; i < h; ++i)
            for (Index j = 0; j < w; ++j)
              y[(oc * 2 * h + 2 * i + a) * 2 * w + 2 * j + b] = src[i * w + j];
        }
  }

  const int xi = x.id, wi = weight.id;
  return g.record(std::move(out), {xi, wi},
                  [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
                    ConstRowMap<Scalar> wmat(gr.value(wi).data(), c, o * 4);
                    RowMat<Scalar> dz(o * 4, hw);
                    for (Index s = 0; s < n; ++s) {
                      const Scalar* gy = gout.data() + s * o * 4 * hw;
                      for (Index oc = 0; oc < o; ++oc)
                        for (Index a = 0; a < 2; ++a)
                          for (Index b = 0; b < 2; ++b) {
                            Scalar* dst = dz.data() + (oc * 4 + a * 2 + b) * hw;
                            for (Index i = 0; i < h; ++i)
                              for (Index j = 0; j < w; ++j)
                                dst[i * w + j] = gy[(oc * 2 * h + 2 * i + a) * 2 * w + 2 * j + b];
                          }
                      if (gr.needs_grad(wi)) {
                        ConstRowMap<Scalar> xs_(gr.value(xi).data() + s * c * hw, c, hw);
                        RowMap<Scalar>(gr.grad(wi).data(), c, o * 4).noalias() +=
                            xs_ * dz.transpose();
                      }
                      if (gr.needs_grad(xi)) {
                        RowMap<Scalar>(gr.grad(xi).data() + s * c * hw, c, hw).noalias() +=
                            wmat * dz;
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Normalization and pointwise ops

template <typename Scalar>
Var<Scalar> instance_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, Scalar eps) {
  static const std::string op = "instance_norm";
  Graph<Scalar>& g = graph_of<Scalar>(op, {x, gamma, beta});
  const Shape& xs = x.shape();
  require_rank(op, xs, 4);
  if (eps <= 0) shape_error(op, "eps must be positive");
  const Index n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  if (gamma.value().numel() != c || beta.value().numel() != c)
    shape_error(op, "affine parameters must have " + std::to_string(c) + " entries");

  auto xhat = std::make_shared<std::vector<Scalar>>(x.value().numel());
  auto inv_std = std::make_shared<std::vector<Scalar>>(n * c);
  Tensor<Scalar> out(xs);
  const Scalar* gm = gamma.value().data();
  const Scalar* bt = beta.value().data();
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (s * c + ch) * hw;
      const Scalar* px = x.value().data() + off;
      ConstArrMap<Scalar> in(px, hw);
      const Scalar mean = ordered_sum(px, hw) / Scalar(hw);
      Scalar var = 0;
      for (Index i = 0; i < hw; ++i) var += (px[i] - mean) * (px[i] - mean);
      var /= Scalar(hw);
      const Scalar is = Scalar(1) / std::sqrt(var + eps);
      (*inv_std)[s * c + ch] = is;
      ArrMap<Scalar> xh(xhat->data() + off, hw);
      xh = (in - mean) * is;
      ArrMap<Scalar>(out.data() + off, hw) = xh * gm[ch] + bt[ch];
    }

  const int xi = x.id, gi = gamma.id, bi = beta.id;
  return g.record(std::move(out), {xi, gi, bi},
                  [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
                    const Scalar* gmv = gr.value(gi).data();
                    const bool need_x = gr.needs_grad(xi);
                    const bool need_g = gr.needs_grad(gi);
                    const bool need_b = gr.needs_grad(bi);
                    for (Index s = 0; s < n; ++s)
                      for (Index ch = 0; ch < c; ++ch) {
                        const Index off = (s * c + ch) * hw;
                        ConstArrMap<Scalar> dy(gout.data() + off, hw);
                        ConstArrMap<Scalar> xh(xhat->data() + off, hw);
                        const Scalar sum_dy = ordered_sum(dy.data(), hw);
                        const Scalar sum_dy_xh = ordered_dot(dy.data(), xh.data(), hw);
                        if (need_g) gr.grad(gi)[ch] += sum_dy_xh;
                        if (need_b) gr.grad(bi)[ch] += sum_dy;
                        if (need_x) {
                          const Scalar k = gmv[ch] * (*inv_std)[s * c + ch] / Scalar(hw);
                          ArrMap<Scalar>(gr.grad(xi).data() + off, hw) +=
                              k * (Scalar(hw) * dy - sum_dy - xh * sum_dy_xh);
                        }
                      }
                  });
}

template <typename Scalar>
Var<Scalar> leaky_relu(Var<Scalar> x, Scalar slope) {
  Graph<Scalar>& g = *x.graph;
  Tensor<Scalar> out(x.shape());
  auto in = x.value().array();
  out.array() = (in > Scalar(0)).select(in, in * slope);
  const int xi = x.id;
  return g.record(std::move(out), {xi}, [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
    auto v = gr.value(xi).array();
    ConstArrMap<Scalar> dy(gout.data(), gout.size());
    ArrMap<Scalar>(gr.grad(xi).data(), gout.size()) += (v > Scalar(0)).select(dy, dy * slope);
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  Graph<Scalar>& g = *x.graph;
  Tensor<Scalar> out(x.shape());
  const Scalar* in = x.value().data();
  for (Index i = 0; i < out.numel(); ++i) out[i] = Scalar(1) / (Scalar(1) + std::exp(-in[i]));
  const int xi = x.id;
  const int yi = static_cast<int>(g.size());
  return g.record(std::move(out), {xi}, [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
    auto y = gr.value(yi).array();
    ConstArrMap<Scalar> dy(gout.data(), gout.size());
    ArrMap<Scalar>(gr.grad(xi).data(), gout.size()) += dy * y * (Scalar(1) - y);
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  Graph<Scalar>& g = graph_of<Scalar>("add", {a, b});
  if (a.shape() != b.shape())
    shape_error("add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() + b.value().array();
  const int ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
    accumulate(gr, ai, gout.data());
    accumulate(gr, bi, gout.data());
  });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  Graph<Scalar>& g = graph_of<Scalar>("mul", {a, b});
  if (a.shape() != b.shape())
    shape_error("mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() * b.value().array();
  const int ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
    ConstArrMap<Scalar> dy(gout.data(), gout.size());
    if (gr.needs_grad(ai))
      ArrMap<Scalar>(gr.grad(ai).data(), gout.size()) += dy * gr.value(bi).array();
    if (gr.needs_grad(bi))
      ArrMap<Scalar>(gr.grad(bi).data(), gout.size()) += dy * gr.value(ai).array();
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor) {
  Graph<Scalar>& g = *x.graph;
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array() * factor;
  const int xi = x.id;
  return g.record(std::move(out), {xi}, [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
    ArrMap<Scalar>(gr.grad(xi).data(), gout.size()) +=
        ConstArrMap<Scalar>(gout.data(), gout.size()) * factor;
  });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename Scalar>
Var<Scalar> concat_channels(Var<Scalar> a, Var<Scalar> b) {
  static const std::string op = "concat_channels";
  Graph<Scalar>& g = graph_of<Scalar>(op, {a, b});
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require_rank(op, as, 4);
  require_rank(op, bs, 4);
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    shape_error(op, shape_str(as) + " vs " + shape_str(bs));
  const Index n = as[0], ca = as[1], cb = bs[1], hw = as[2] * as[3];
  Tensor<Scalar> out({n, ca + cb, as[2], as[3]});
  for (Index s = 0; s < n; ++s) {
    std::copy_n(a.value().data() + s * ca * hw, ca * hw, out.data() + s * (ca + cb) * hw);
    std::copy_n(b.value().data() + s * cb * hw, cb * hw, out.data() + (s * (ca + cb) + ca) * hw);
  }
  const int ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
    for (Index s = 0; s < n; ++s) {
      if (gr.needs_grad(ai)) {
        ArrMap<Scalar>(gr.grad(ai).data() + s * ca * hw, ca * hw) +=
            ConstArrMap<Scalar>(gout.data() + s * (ca + cb) * hw, ca * hw);
      }
      if (gr.needs_grad(bi)) {
        ArrMap<Scalar>(gr.grad(bi).data() + s * cb * hw, cb * hw) +=
            ConstArrMap<Scalar>(gout.data() + (s * (ca + cb) + ca) * hw, cb * hw);
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> flatten_tokens(Var<Scalar> x) {
  static const std::string op = "flatten_tokens";
  const Shape& xs = x.shape();
  require_rank(op, xs, 4);
  const Index n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  Tensor<Scalar> out({n, hw, c});
  for (Index s = 0; s < n; ++s)
    RowMap<Scalar>(out.data() + s * hw * c, hw, c) =
        ConstRowMap<Scalar>(x.value().data() + s * c * hw, c, hw).transpose();
  const int xi = x.id;
  return x.graph->record(std::move(out), {xi},
                         [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
                           for (Index s = 0; s < n; ++s)
                             RowMap<Scalar>(gr.grad(xi).data() + s * c * hw, c, hw) +=
                                 ConstRowMap<Scalar>(gout.data() + s * hw * c, hw, c).transpose();
                         });
}

template <typename Scalar>
Var<Scalar> unflatten_tokens(Var<Scalar> tokens, Index height, Index width) {
  static const std::string op = "unflatten_tokens";
  const Shape& ts = tokens.shape();
  require_rank(op, ts, 3);
  if (height <= 0 || width <= 0 || ts[1] != height * width)
    shape_error(op, "cannot reshape " + shape_str(ts) + " to " + std::to_string(height) + "x" +
                        std::to_string(width));
  const Index n = ts[0], hw = ts[1], c = ts[2];
  Tensor<Scalar> out({n, c, height, width});
  for (Index s = 0; s < n; ++s)
    RowMap<Scalar>(out.data() + s * c * hw, c, hw) =
        ConstRowMap<Scalar>(tokens.value().data() + s * hw * c, hw, c).transpose();
  const int ti = tokens.id;
  return tokens.graph->record(std::move(out), {ti},
                              [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
                                for (Index s = 0; s < n; ++s)
                                  RowMap<Scalar>(gr.grad(ti).data() + s * hw * c, hw, c) +=
                                      ConstRowMap<Scalar>(gout.data() + s * c * hw, c, hw)
                                          .transpose();
                              });
}

// ---------------------------------------------------------------------------
// Attention primitives

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b, bool transpose_b) {
  static const std::string op = "matmul";
  Graph<Scalar>& g = graph_of<Scalar>(op, {a, b});
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || as.size() > 3 || bs.size() < 2 || bs.size() > 3)
    shape_error(op, "operands must be rank 2 or 3");
  const bool batched = as.size() == 3 || bs.size() == 3;
  const Index ba = as.size() == 3 ? as[0] : 1;
  const Index bb = bs.size() == 3 ? bs[0] : 1;
  const Index rows = as[as.size() - 2], inner = as.back();
  const Index b_rows = bs[bs.size() - 2], b_cols = bs.back();
  const Index b_inner = transpose_b ? b_cols : b_rows;
  const Index cols = transpose_b ? b_rows : b_cols;
  if (inner != b_inner)
    shape_error(op, "inner dimensions differ: " + shape_str(as) + " x " + shape_str(bs) +
                        (transpose_b ? "^T" : ""));
  if (bb == 0 || ba % bb != 0)
    shape_error(op, "batch " + std::to_string(bb) + " does not divide " + std::to_string(ba));
  const Index group = ba / bb;

  Tensor<Scalar> out(batched ? Shape{ba, rows, cols} : Shape{rows, cols});
  for (Index i = 0; i < ba; ++i) {
    ConstRowMap<Scalar> am(a.value().data() + i * rows * inner, rows, inner);
    ConstRowMap<Scalar> bm(b.value().data() + (i / group) * b_rows * b_cols, b_rows, b_cols);
    RowMap<Scalar> cm(out.data() + i * rows * cols, rows, cols);
    if (transpose_b)
      cm.noalias() = am * bm.transpose();
    else
      cm.noalias() = am * bm;
  }

  const int ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
    for (Index i = 0; i < ba; ++i) {
      ConstRowMap<Scalar> dc(gout.data() + i * rows * cols, rows, cols);
      ConstRowMap<Scalar> am(gr.value(ai).data() + i * rows * inner, rows, inner);
      const Index j = i / group;
      ConstRowMap<Scalar> bm(gr.value(bi).data() + j * b_rows * b_cols, b_rows, b_cols);
      if (gr.needs_grad(ai)) {
        RowMap<Scalar> da(gr.grad(ai).data() + i * rows * inner, rows, inner);
        if (transpose_b)
          da.noalias() += dc * bm;
        else
          da.noalias() += dc * bm.transpose();
      }
      if (gr.needs_grad(bi)) {
        RowMap<Scalar> db(gr.grad(bi).data() + j * b_rows * b_cols, b_rows, b_cols);
        if (transpose_b)
          db.noalias() += dc.transpose() * am;
        else
          db.noalias() += am.transpose() * dc;
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> x) {
  const Shape& xs = x.shape();
  if (xs.empty()) shape_error("softmax_rows", "rank must be >= 1");
  const Index m = xs.back();
  const Index rows = m == 0 ? 0 : x.value().numel() / m;
  Tensor<Scalar> out(xs);
  for (Index r = 0; r < rows; ++r) {
    const Scalar* in = x.value().data() + r * m;
    Scalar* y = out.data() + r * m;
    const Scalar mx = *std::max_element(in, in + m);
    for (Index i = 0; i < m; ++i) y[i] = std::exp(in[i] - mx);
    const Scalar z = ordered_sum(y, m);
    for (Index i = 0; i < m; ++i) y[i] /= z;
  }
  const int xi = x.id;
  const int yi = static_cast<int>(x.graph->size());
  return x.graph->record(std::move(out), {xi},
                         [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
                           for (Index r = 0; r < rows; ++r) {
                             ConstArrMap<Scalar> y(gr.value(yi).data() + r * m, m);
                             ConstArrMap<Scalar> dy(gout.data() + r * m, m);
                             const Scalar dot = ordered_dot(dy.data(), y.data(), m);
                             ArrMap<Scalar>(gr.grad(xi).data() + r * m, m) += y * (dy - dot);
                           }
                         });
}

// ---------------------------------------------------------------------------
// Resizing

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index height, Index width) {
  check_resize(x.shape(), height, width, "resize_bilinear");
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const LinearTaps ty = bilinear_taps(h, height), tx = bilinear_taps(w, width);
  Tensor<Scalar> out({x.dim(0), x.dim(1), height, width});
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = x.data() + p * h * w;
    Scalar* dst = out.data() + p * height * width;
    for (Index i = 0; i < height; ++i) {
      const Scalar fy = static_cast<Scalar>(ty.frac[i]);
      const Scalar* r0 = src + ty.lo[i] * w;
      const Scalar* r1 = src + ty.hi[i] * w;
      for (Index j = 0; j < width; ++j) {
        const Scalar fx = static_cast<Scalar>(tx.frac[j]);
        const Scalar top = r0[tx.lo[j]] + fx * (r0[tx.hi[j]] - r0[tx.lo[j]]);
        const Scalar bot = r1[tx.lo[j]] + fx * (r1[tx.hi[j]] - r1[tx.lo[j]]);
        dst[i * width + j] = top + fy * (bot - top);
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> resize_nearest(const Tensor<Scalar>& x, Index height, Index width) {
  check_resize(x.shape(), height, width, "resize_nearest");
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto iy = nearest_taps(h, height), ix = nearest_taps(w, width);
  Tensor<Scalar> out({x.dim(0), x.dim(1), height, width});
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = x.data() + p * h * w;
    Scalar* dst = out.data() + p * height * width;
    for (Index i = 0; i < height; ++i)
      for (Index j = 0; j < width; ++j) dst[i * width + j] = src[iy[i] * w + ix[j]];
  }
  return out;
}

template <typename Scalar>
Var<Scalar> resize_bilinear(Var<Scalar> x, Index height, Index width) {
  Tensor<Scalar> out = resize_bilinear(x.value(), height, width);
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int xi = x.id;
  return x.graph->record(std::move(out), {xi},
                         [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
                           const LinearTaps ty = bilinear_taps(h, height);
                           const LinearTaps tx = bilinear_taps(w, width);
                           auto& gx = gr.grad(xi);
                           for (Index p = 0; p < planes; ++p) {
                             Scalar* dst = gx.data() + p * h * w;
                             const Scalar* src = gout.data() + p * height * width;
                             for (Index i = 0; i < height; ++i) {
                               const Scalar fy = static_cast<Scalar>(ty.frac[i]);
                               for (Index j = 0; j < width; ++j) {
                                 const Scalar fx = static_cast<Scalar>(tx.frac[j]);
                                 const Scalar d = src[i * width + j];
                                 dst[ty.lo[i] * w + tx.lo[j]] += d * (1 - fy) * (1 - fx);
                                 dst[ty.lo[i] * w + tx.hi[j]] += d * (1 - fy) * fx;
                                 dst[ty.hi[i] * w + tx.lo[j]] += d * fy * (1 - fx);
                                 dst[ty.hi[i] * w + tx.hi[j]] += d * fy * fx;
                               }
                             }
                           }
                         });
}

template <typename Scalar>
Var<Scalar> resize_nearest(Var<Scalar> x, Index height, Index width) {
  Tensor<Scalar> out = resize_nearest(x.value(), height, width);
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int xi = x.id;
  return x.graph->record(std::move(out), {xi},
                         [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
                           const auto iy = nearest_taps(h, height), ix = nearest_taps(w, width);
                           auto& gx = gr.grad(xi);
                           for (Index p = 0; p < planes; ++p)
                             for (Index i = 0; i < height; ++i)
                               for (Index j = 0; j < width; ++j)
                                 gx[p * h * w + iy[i] * w + ix[j]] +=
                                     gout[p * height * width + i * width + j];
                         });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Tensor<Scalar> out({1}, ordered_sum(x.value().data(), x.value().numel()));
  const int xi = x.id;
  return x.graph->record(std::move(out), {xi},
                         [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
                           auto& gx = gr.grad(xi);
                           ArrMap<Scalar>(gx.data(), gx.size()) += gout[0];
                         });
}

template <typename Scalar>
Var<Scalar> soft_dice_loss(Var<Scalar> pred, Var<Scalar> target, Scalar eps,
                           DiceReduction reduction) {
  static const std::string op = "soft_dice_loss";
  Graph<Scalar>& g = graph_of<Scalar>(op, {pred, target});
  if (pred.shape() != target.shape())
    shape_error(op, shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  if (pred.value().rank() < 1) shape_error(op, "prediction must have a sample axis");
  const Index total = pred.value().numel();
  const Index groups = reduction == DiceReduction::kBatch ? 1 : pred.dim(0);
  const Index per = groups == 0 ? 0 : total / groups;
  auto overlap = std::make_shared<std::vector<Scalar>>(groups);
  auto denom = std::make_shared<std::vector<Scalar>>(groups);
  Scalar loss = 0;
  for (Index k = 0; k < groups; ++k) {
    const Scalar* p = pred.value().data() + k * per;
    const Scalar* m = target.value().data() + k * per;
    (*overlap)[k] = ordered_dot(p, m, per);
    (*denom)[k] = ordered_dot(p, p, per) + ordered_dot(m, m, per) + eps;
    loss += Scalar(1) - Scalar(2) * (*overlap)[k] / (*denom)[k];
  }
  if (groups > 0) loss /= Scalar(groups);
  const int pi = pred.id, ti = target.id;
  return g.record(Tensor<Scalar>({1}, loss), {pi, ti},
                  [=](Graph<Scalar>& gr, const std::vector<Scalar>& gout) {
                    if (!gr.needs_grad(pi)) return;
                    const Scalar seed = gout[0] / Scalar(groups);
                    for (Index k = 0; k < groups; ++k) {
                      ConstArrMap<Scalar> p(gr.value(pi).data() + k * per, per);
                      ConstArrMap<Scalar> m(gr.value(ti).data() + k * per, per);
                      const Scalar b = (*denom)[k];
                      ArrMap<Scalar>(gr.grad(pi).data() + k * per, per) +=
                          seed * (Scalar(-2) * m / b + Scalar(4) * (*overlap)[k] * p / (b * b));
                    }
                  });
}

#define PAM_INSTANTIATE_AUTODIFF(S)                                                         \
  template class Graph<S>;                                                                  \
  template Var<S> conv2d(Var<S>, Var<S>, Var<S>, int);                                      \
  template Var<S> transposed_conv2d(Var<S>, Var<S>);                                        \
  template Var<S> instance_norm(Var<S>, Var<S>, Var<S>, S);                                 \
  template Var<S> leaky_relu(Var<S>, S);                                                    \
  template Var<S> sigmoid(Var<S>);                                                          \
  template Var<S> add(Var<S>, Var<S>);                                                      \
  template Var<S> mul(Var<S>, Var<S>);                                                      \
  template Var<S> scale(Var<S>, S);                                                         \
  template Var<S> concat_channels(Var<S>, Var<S>);                                          \
  template Var<S> flatten_tokens(Var<S>);                                                   \
  template Var<S> unflatten_tokens(Var<S>, Index, Index);                                   \
  template Var<S> matmul(Var<S>, Var<S>, bool);                                             \
  template Var<S> softmax_rows(Var<S>);                                                     \
  template Var<S> resize_bilinear(Var<S>, Index, Index);                                    \
  template Var<S> resize_nearest(Var<S>, Index, Index);                                     \
  template Tensor<S> resize_bilinear(const Tensor<S>&, Index, Index);                       \
  template Tensor<S> resize_nearest(const Tensor<S>&, Index, Index);                        \
  template Var<S> sum(Var<S>);                                                              \
  template Var<S> soft_dice_loss(Var<S>, Var<S>, S, DiceReduction);

PAM_INSTANTIATE_AUTODIFF(float)
PAM_INSTANTIATE_AUTODIFF(double)

#undef PAM_INSTANTIATE_AUTODIFF

}  // namespace pam
