// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "egfuse/errors.hpp"

namespace egfuse {

/// Dense 4-axis tensor [batch, channel, height, width], contiguous row-major.
///
/// The scalar type is a template parameter: the pipeline runs in float,
/// gradient checks instantiate the double variant.
template <typename T>
class TensorT {
public:
  TensorT() = default;

  TensorT(int b, int c, int h, int w, T fill = T{0}) : dims_{b, c, h, w} {
    if (b < 0 || c < 0 || h < 0 || w < 0) {
      throw ShapeError("tensor extents must be non-negative");
    }
    data_.assign(static_cast<size_t>(b) * c * h * w, fill);
  }

  static TensorT zeros(const std::array<int, 4>& s) {
    return TensorT(s[0], s[1], s[2], s[3]);
  }

  static TensorT zeros_like(const TensorT& other) {
    return TensorT(other.dims_[0], other.dims_[1], other.dims_[2], other.dims_[3]);
  }

  /// Scalar wrapped as a [1,1,1,1] tensor.
  static TensorT scalar(T v) {
    TensorT t(1, 1, 1, 1);
    t.data_[0] = v;
    return t;
  }

  int batch() const { return dims_[0]; }
  int channels() const { return dims_[1]; }
  int height() const { return dims_[2]; }
  int width() const { return dims_[3]; }
  const std::array<int, 4>& shape() const { return dims_; }

  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  bool same_shape(const TensorT& other) const { return dims_ == other.dims_; }

  size_t index(int b, int c, int h, int w) const {
    return ((static_cast<size_t>(b) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w;
  }

  T& at(int b, int c, int h, int w) { return data_[index(b, c, h, w)]; }
  T at(int b, int c, int h, int w) const { return data_[index(b, c, h, w)]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void require_finite(const char* where) const {
    if (!all_finite()) {
      throw NumericError(std::string(where) + ": non-finite value in result");
    }
  }

  std::string shape_str() const {
    return "[" + std::to_string(dims_[0]) + "," + std::to_string(dims_[1]) + "," +
           std::to_string(dims_[2]) + "," + std::to_string(dims_[3]) + "]";
  }

private:
  std::array<int, 4> dims_{0, 0, 0, 0};
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T, typename U>
TensorT<U> cast_tensor(const TensorT<T>& t) {
  TensorT<U> out(t.batch(), t.channels(), t.height(), t.width());
  for (int64_t i = 0; i < t.size(); ++i) {
    out.data()[i] = static_cast<U>(t.data()[i]);
  }
  return out;
}

}  // namespace egfuse
