#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sci/error.hpp"

namespace sci {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s);

// Dense row-major tensor. Only the handful of element types the pipeline
// stores are instantiated (float, double, uint8_t, int64_t).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_str(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  // Same data, different shape of equal element count.
  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor& o) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Copies slice `i` of the leading axis out of `t`.
template <class T>
Tensor<T> slice_leading(const Tensor<T>& t, std::size_t i) {
  Shape inner(t.shape().begin() + 1, t.shape().end());
  const std::size_t n = shape_size(inner);
  if (i >= t.dim(0)) throw ShapeError("slice index out of range for shape " + shape_str(t.shape()));
  return Tensor<T>(inner, std::vector<T>(t.vec().begin() + i * n, t.vec().begin() + (i + 1) * n));
}

// Stacks equally shaped tensors along a new leading axis.
template <class T>
Tensor<T> stack_leading(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("cannot stack zero tensors");
  Shape s = parts.front().shape();
  std::vector<T> out;
  out.reserve(parts.size() * parts.front().size());
  for (const auto& p : parts) {
    if (p.shape() != s) throw ShapeError("stack shape mismatch: " + shape_str(s) + " vs " + shape_str(p.shape()));
    out.insert(out.end(), p.vec().begin(), p.vec().end());
  }
  s.insert(s.begin(), parts.size());
  return Tensor<T>(std::move(s), std::move(out));
}

}  // namespace sci
