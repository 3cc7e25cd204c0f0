#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "windgrid/error.hpp"

namespace windgrid {

// Dense row-major (C-order) tensor. Instantiated with float for training
// storage and double for gradient checking.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), fill);
  }

  static Tensor from(std::vector<int> shape, std::vector<T> data) {
    Tensor t;
    if (count(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("tensor data size does not match shape");
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  template <class... I>
  T& at(I... idx) {
    return data_[static_cast<std::size_t>(offset(idx...))];
  }
  template <class... I>
  T at(I... idx) const {
    return data_[static_cast<std::size_t>(offset(idx...))];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_str() const { return shape_to_string(shape_); }

  static std::string shape_to_string(const std::vector<int>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s[i]);
    }
    return out + ")";
  }

  static std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ShapeError("negative tensor dimension");
      n *= d;
    }
    return n;
  }

 private:
  template <class... I>
  std::int64_t offset(I... idx) const {
    assert(sizeof...(I) == shape_.size());
    std::int64_t off = 0;
    std::size_t k = 0;
    ((off = off * shape_[k], off += static_cast<std::int64_t>(idx), ++k), ...);
    return off;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  Tensor<To> out(src.shape());
  for (std::int64_t i = 0; i < src.size(); ++i) out[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace windgrid
