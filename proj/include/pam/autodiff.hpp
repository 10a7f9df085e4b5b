#pragma once

#include "pam/tensor.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <vector>

namespace pam {

template <typename Scalar>
class Graph;

/// Handle to a value recorded on a Graph.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  int id = -1;

  const Tensor<Scalar>& value() const;
  const Shape& shape() const { return value().shape(); }
  Index dim(int axis) const { return value().dim(axis); }
  bool valid() const { return graph != nullptr && id >= 0; }
};

/// Tape of recorded operations. Nodes are appended in execution order, so
/// every input of node i is a node j < i; backward walks the tape once in
/// reverse.
///
/// A graph is single-threaded. Parameters are referenced, not copied: they
/// must outlive the graph and stay unmodified until backward has run.
template <typename Scalar>
class Graph {
 public:
  using Backward = std::function<void(Graph&, const std::vector<Scalar>& out_grad)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Constant input; never receives a gradient.
  Var<Scalar> input(Tensor<Scalar> value);
  /// Leaf bound to an external tensor. When `t.requires_grad`, backward
  /// accumulates (+=) into `t.grad`.
  Var<Scalar> parameter(Tensor<Scalar>& t);

  /// Appends an op node. `backward` is dropped when no input needs a gradient.
  Var<Scalar> record(Tensor<Scalar> value, std::vector<int> inputs, Backward backward);

  void backward(Var<Scalar> loss);

  const Tensor<Scalar>& value(int id) const;
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer for node `id`, zero-allocated on first use.
  std::vector<Scalar>& grad(int id);

  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar>* external = nullptr;
    std::vector<Scalar> grad;
    std::vector<int> inputs;
    Backward backward;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;  // stable references across appends
  bool record_ = true;
  bool consumed_ = false;
};

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::value() const {
  return graph->value(id);
}

// ---------------------------------------------------------------------------
// Operations. Feature maps are NCHW; token sequences are (batch, tokens, C).

/// K in {1, 2, 3}; padding (K-1)/2 for odd K, 0 for K = 2. `bias` may be an
/// invalid Var for no bias.
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, int stride);

/// 2x2 kernel, stride 2. weight is (C_in, C_out, 2, 2); output is exactly 2H x 2W.
template <typename Scalar>
Var<Scalar> transposed_conv2d(Var<Scalar> x, Var<Scalar> weight);

template <typename Scalar>
Var<Scalar> instance_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta,
                          Scalar eps = Scalar(1e-5));

template <typename Scalar>
Var<Scalar> leaky_relu(Var<Scalar> x, Scalar slope = Scalar(0.01));

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x);

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b);

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor);

/// Concatenate along the channel axis (axis 1).
template <typename Scalar>
Var<Scalar> concat_channels(Var<Scalar> a, Var<Scalar> b);

/// (N, C, H, W) -> (N, H*W, C).
template <typename Scalar>
Var<Scalar> flatten_tokens(Var<Scalar> x);

/// (N, H*W, C) -> (N, C, H, W).
template <typename Scalar>
Var<Scalar> unflatten_tokens(Var<Scalar> tokens, Index height, Index width);

/// Batched product of (Ba, N, K) and (Bb, K, M), or (Bb, M, K) with
/// `transpose_b`. Bb must divide Ba; row i of the a-batch pairs with b-batch
/// i / (Ba / Bb). Rank-2 operands are treated as a batch of one.
template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b, bool transpose_b = false);

/// Softmax over the last axis with max subtraction.
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> x);

/// Half-pixel bilinear resize of NCHW maps.
template <typename Scalar>
Var<Scalar> resize_bilinear(Var<Scalar> x, Index height, Index width);

/// Nearest resize, source index floor(dst * in / out).
template <typename Scalar>
Var<Scalar> resize_nearest(Var<Scalar> x, Index height, Index width);

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x);

enum class DiceReduction {
  kPerSample,  ///< mean over samples of per-sample dice loss
  kBatch,      ///< one dice over all pixels of the batch
};

/// Soft dice loss 1 - 2 sum(PM) / (sum(P^2) + sum(M^2) + eps). `target` is
/// constant (no gradient). Leading axis is the sample axis.
template <typename Scalar>
Var<Scalar> soft_dice_loss(Var<Scalar> pred, Var<Scalar> target, Scalar eps = Scalar(1e-6),
                           DiceReduction reduction = DiceReduction::kPerSample);

// ---------------------------------------------------------------------------
// Forward-only kernels shared by ops and by callers outside a graph.

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index height, Index width);
template <typename Scalar>
Tensor<Scalar> resize_nearest(const Tensor<Scalar>& x, Index height, Index width);

}  // namespace pam
