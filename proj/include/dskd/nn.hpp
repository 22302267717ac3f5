// SPDX-License-Identifier: Apache-2.0
//
// Minimal layer toolkit with hand-written backward passes. Every trainable
// block in the detector is composed from these pieces; activations needed by
// the backward pass live in explicit cache structs owned by the caller so a
// forward pass in evaluation mode allocates nothing extra.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dskd/tensor.hpp"

namespace dskd::nn {

struct Param {
  std::string name;
  std::vector<int> shape;
  Buffer value;
  Buffer grad;

  Param() = default;
  Param(std::string n, std::vector<int> s);
  std::size_t size() const { return value.size(); }
};

using ParamList = std::vector<Param*>;
using ConstParamList = std::vector<const Param*>;

void zero_grad(const ParamList& params);
std::size_t parameter_count(const ConstParamList& params);

struct ConvCache {
  RowMatrix cols;
  Shape in_shape;
};

/// k x k convolution with zero padding. Weight rows are ordered
/// (ky, kx, in_channel), columns are output channels.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
         int padding);

  /// He-normal weights, zero bias.
  void init(std::mt19937_64& rng);

  Shape output_shape(const Shape& in) const;
  Tensor forward(const Tensor& in, ConvCache* cache = nullptr) const;
  /// Accumulates weight/bias gradients and returns the input gradient
  /// (an empty tensor when `want_input_grad` is false).
  Tensor backward(const Tensor& grad_out, const ConvCache& cache, bool want_input_grad = true);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }

  void collect(ParamList& out) { out.push_back(&weight); out.push_back(&bias); }
  void collect(ConstParamList& out) const { out.push_back(&weight); out.push_back(&bias); }

  Param weight;
  Param bias;

 private:
  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
};

Tensor relu(const Tensor& in);
/// `out` is the forward output of relu.
Tensor relu_backward(const Tensor& grad_out, const Tensor& out);

Tensor upsample_nearest2x(const Tensor& in);
Tensor upsample_nearest2x_backward(const Tensor& grad_out);

/// 3x3 / stride 2 / pad 1 max pooling (forward only; used by the frozen teacher).
Tensor max_pool3x3s2(const Tensor& in);

Tensor concat_channels(const std::vector<const Tensor*>& parts);
std::vector<Tensor> split_channels(const Tensor& joined, const std::vector<int>& channels);

/// Mean over all spatial positions, returned as a 1 x 1 x c tensor.
Tensor global_avg_pool(const Tensor& in);
Tensor global_avg_pool_backward(const Tensor& grad_out, const Shape& in_shape);

/// Repeats a 1 x 1 x c tensor over an h x w grid.
Tensor broadcast(const Tensor& vec, int h, int w);
Tensor broadcast_backward(const Tensor& grad_out);

/// Adam with bias correction; no weight decay.
class Adam {
 public:
  Adam(ParamList params, double lr, double beta1, double beta2, double eps = 1e-8);
  void step();
  std::int64_t steps() const { return t_; }

 private:
  ParamList params_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Buffer> m_, v_;
};

}  // namespace dskd::nn
