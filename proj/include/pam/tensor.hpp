#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pam {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

std::string shape_str(const Shape& shape);
Index shape_numel(const Shape& shape);

/// Dense row-major tensor (last axis fastest). NCHW for feature maps.
///
/// `grad` is empty until a backward pass or optimizer touches it; when
/// present it always has `numel()` entries.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != shape_numel(shape_))
      throw std::invalid_argument("tensor: data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  template <typename Rng>
  static Tensor uniform(Shape shape, Scalar lo, Scalar hi, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data_) v = static_cast<Scalar>(dist(rng));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(axis < 0 ? shape_.size() + axis : axis); }
  Index numel() const { return static_cast<Index>(data_.size()); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }
  std::vector<Scalar>& storage() { return data_; }
  const std::vector<Scalar>& storage() const { return data_; }

  VectorMap array() { return VectorMap(data_.data(), numel()); }
  ConstVectorMap array() const { return ConstVectorMap(data_.data(), numel()); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(std::initializer_list<Index> idx) { return data_[offset(idx)]; }
  Scalar at(std::initializer_list<Index> idx) const { return data_[offset(idx)]; }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool requires_grad = false;
  std::vector<Scalar> grad;

  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad.assign(data_.size(), Scalar(0)); }
  VectorMap grad_array() {
    if (grad.empty()) zero_grad();
    return VectorMap(grad.data(), numel());
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    for (Index i = 0; i < numel(); ++i) out[i] = static_cast<Other>(data_[i]);
    out.requires_grad = requires_grad;
    return out;
  }

  bool all_finite() const { return array().isFinite().all(); }

 private:
  Index offset(std::initializer_list<Index> idx) const {
    if (idx.size() != shape_.size()) throw std::out_of_range("tensor: index rank mismatch");
    Index off = 0;
    std::size_t a = 0;
    for (Index i : idx) {
      if (i < 0 || i >= shape_[a]) throw std::out_of_range("tensor: index out of range");
      off = off * shape_[a++] + i;
    }
    return off;
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace pam
