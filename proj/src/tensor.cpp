// SPDX-License-Identifier: Apache-2.0
#include "dskd/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "dskd/error.hpp"

namespace dskd {

std::string to_string(const Shape& s) {
  return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_shape(other, shape_, "tensor add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw InputError(std::string(what) + ": expected shape " + to_string(expected) +
                     ", got " + to_string(t.shape()));
  }
}

}  // namespace dskd
