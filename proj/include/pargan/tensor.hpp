#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pargan/error.hpp"

namespace pargan {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major tensor. Images and feature maps use NCHW layout.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw Error(ErrorCode::shape, "tensor data size " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// NCHW element access.
  T& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw Error(ErrorCode::shape, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Concatenates equally shaped tensors along a new leading batch axis.
/// Inputs of shape [1, ...] are stacked along their existing leading axis.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
  if (items.empty()) throw Error(ErrorCode::shape, "cannot stack an empty batch");
  Shape inner = items.front().shape();
  if (!inner.empty() && inner.front() == 1) inner.erase(inner.begin());
  Shape out_shape = inner;
  out_shape.insert(out_shape.begin(), static_cast<int>(items.size()));
  Tensor<T> out(out_shape);
  const std::size_t stride = shape_size(inner);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].size() != stride) throw Error(ErrorCode::shape, "batch items differ in size");
    std::copy(items[i].data(), items[i].data() + stride, out.data() + i * stride);
  }
  return out;
}

/// Slice [index] of the leading axis, keeping a leading axis of one.
template <typename T>
Tensor<T> batch_item(const Tensor<T>& batch, int index) {
  Shape shape = batch.shape();
  const std::size_t stride = batch.size() / static_cast<std::size_t>(shape.front());
  shape.front() = 1;
  std::vector<T> data(batch.data() + index * stride, batch.data() + (index + 1) * stride);
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace pargan
