// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/StdVector>

namespace dskd {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Storage aligned to Eigen's packet size. Eigen peels unaligned heads off
/// vectorized loops, so plain heap alignment would make rounding depend on
/// the allocation address.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct Shape {
  int h = 0;
  int w = 0;
  int c = 0;

  int positions() const { return h * w; }
  std::size_t size() const { return static_cast<std::size_t>(h) * w * c; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Dense h x w x c grid stored channel-last, so the feature vector of one
/// spatial position is contiguous. Row i of `matrix()` is position i.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(shape), data_(shape.size(), fill) {}
  Tensor(int h, int w, int c, double fill = 0.0) : Tensor(Shape{h, w, c}, fill) {}

  const Shape& shape() const { return shape_; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  int c() const { return shape_.c; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int y, int x, int ch) { return data_[index(y, x, ch)]; }
  double operator()(int y, int x, int ch) const { return data_[index(y, x, ch)]; }

  std::span<double> pixel(int pos) {
    return {data_.data() + static_cast<std::size_t>(pos) * shape_.c,
            static_cast<std::size_t>(shape_.c)};
  }
  std::span<const double> pixel(int pos) const {
    return {data_.data() + static_cast<std::size_t>(pos) * shape_.c,
            static_cast<std::size_t>(shape_.c)};
  }

  Buffer& values() { return data_; }
  const Buffer& values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  MatrixMap matrix() { return {data_.data(), shape_.positions(), shape_.c}; }
  ConstMatrixMap matrix() const { return {data_.data(), shape_.positions(), shape_.c}; }

  bool all_finite() const;
  void fill(double v);
  Tensor& operator+=(const Tensor& other);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t index(int y, int x, int ch) const {
    return (static_cast<std::size_t>(y) * shape_.w + x) * shape_.c + ch;
  }

  Shape shape_{};
  Buffer data_;
};

/// Throws InputError when `t` does not have `expected` shape.
void require_shape(const Tensor& t, const Shape& expected, const char* what);

}  // namespace dskd
