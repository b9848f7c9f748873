#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "xtalk/errors.hpp"

namespace xtalk {

/// Extents of a rank-4 (batch, channel, height, width) array. Rank-2 data
/// such as (B, K) feature rows is stored as (B, K, 1, 1).
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t size() const { return n * c * h * w; }
  std::size_t per_item() const { return c * h * w; }
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense row-major NCHW array with value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(std::size_t n, std::size_t c, std::size_t h = 1, std::size_t w = 1, T fill = T(0))
      : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::span<T> item(std::size_t b) { return {data_.data() + b * shape_.per_item(), shape_.per_item()}; }
  std::span<const T> item(std::size_t b) const {
    return {data_.data() + b * shape_.per_item(), shape_.per_item()};
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t b, std::size_t c, std::size_t h = 0, std::size_t w = 0) const {
    return ((b * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t b, std::size_t c, std::size_t h = 0, std::size_t w = 0) { return data_[index(b, c, h, w)]; }
  const T& at(std::size_t b, std::size_t c, std::size_t h = 0, std::size_t w = 0) const {
    return data_[index(b, c, h, w)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new extents of equal total size.
  void reshape(Shape s) {
    if (s.size() != data_.size()) throw ShapeError("reshape " + shape_.str() + " -> " + s.str());
    shape_ = s;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  void require_same(const Tensor& o, const char* what) const {
    if (!(shape_ == o.shape_))
      throw ShapeError(std::string(what) + ": " + shape_.str() + " vs " + o.shape_.str());
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Rows `indices` of `src` stacked in order.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& src, std::span<const std::size_t> indices) {
  Shape s = src.shape();
  s.n = indices.size();
  Tensor<T> out(s);
  const std::size_t m = s.per_item();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= src.shape().n) throw ShapeError("gather_rows: index out of range");
    std::copy_n(src.data() + indices[i] * m, m, out.data() + i * m);
  }
  return out;
}

/// Rows [begin, begin + count).
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& src, std::size_t begin, std::size_t count) {
  if (begin + count > src.shape().n) throw ShapeError("slice_rows out of range");
  Shape s = src.shape();
  s.n = count;
  Tensor<T> out(s);
  const std::size_t m = s.per_item();
  std::copy_n(src.data() + begin * m, count * m, out.data());
  return out;
}

/// Stack along the batch axis.
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().per_item() != b.shape().per_item() || a.shape().c != b.shape().c ||
      a.shape().h != b.shape().h)
    throw ShapeError("concat_rows: " + a.shape().str() + " vs " + b.shape().str());
  Shape s = a.shape();
  s.n += b.shape().n;
  Tensor<T> out(s);
  std::copy_n(a.data(), a.size(), out.data());
  std::copy_n(b.data(), b.size(), out.data() + a.size());
  return out;
}

}  // namespace xtalk
