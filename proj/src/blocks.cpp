// SPDX-License-Identifier: Apache-2.0
#include "dskd/blocks.hpp"

namespace dskd::nn {

ResidualDownStage::ResidualDownStage(const std::string& name, int in_channels, int out_channels)
    : conv1_(name + ".conv1", in_channels, out_channels, 3, 2, 1),
      conv2_(name + ".conv2", out_channels, out_channels, 3, 1, 1),
      shortcut_(name + ".shortcut", in_channels, out_channels, 1, 2, 0) {}

void ResidualDownStage::init(std::mt19937_64& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  shortcut_.init(rng);
}

Tensor ResidualDownStage::forward(const Tensor& x, Cache* cache) const {
  Tensor hidden = relu(conv1_.forward(x, cache ? &cache->conv1 : nullptr));
  Tensor y = conv2_.forward(hidden, cache ? &cache->conv2 : nullptr);
  y += shortcut_.forward(x, cache ? &cache->shortcut : nullptr);
  y = relu(y);
  if (cache) {
    cache->hidden = std::move(hidden);
    cache->out = y;
  }
  return y;
}

Tensor ResidualDownStage::backward(const Tensor& grad_out, const Cache& cache,
                                   bool want_input_grad) {
  const Tensor g = relu_backward(grad_out, cache.out);
  Tensor g_hidden = relu_backward(conv2_.backward(g, cache.conv2), cache.hidden);
  Tensor g_in = conv1_.backward(g_hidden, cache.conv1, want_input_grad);
  Tensor g_short = shortcut_.backward(g, cache.shortcut, want_input_grad);
  if (!want_input_grad) return {};
  g_in += g_short;
  return g_in;
}

void ResidualDownStage::collect(ParamList& out) {
  conv1_.collect(out);
  conv2_.collect(out);
  shortcut_.collect(out);
}

void ResidualDownStage::collect(ConstParamList& out) const {
  conv1_.collect(out);
  conv2_.collect(out);
  shortcut_.collect(out);
}

ResidualUpStage::ResidualUpStage(const std::string& name, int in_channels, int out_channels)
    : conv1_(name + ".conv1", in_channels, out_channels, 3, 1, 1),
      conv2_(name + ".conv2", out_channels, out_channels, 3, 1, 1),
      shortcut_(name + ".shortcut", in_channels, out_channels, 1, 1, 0) {}

void ResidualUpStage::init(std::mt19937_64& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  shortcut_.init(rng);
}

Tensor ResidualUpStage::forward(const Tensor& x, Cache* cache) const {
  const Tensor up = upsample_nearest2x(x);
  Tensor hidden = relu(conv1_.forward(up, cache ? &cache->conv1 : nullptr));
  Tensor y = conv2_.forward(hidden, cache ? &cache->conv2 : nullptr);
  y += shortcut_.forward(up, cache ? &cache->shortcut : nullptr);
  if (cache) cache->hidden = std::move(hidden);
  return y;
}

Tensor ResidualUpStage::backward(const Tensor& grad_out, const Cache& cache) {
  Tensor g_hidden = relu_backward(conv2_.backward(grad_out, cache.conv2), cache.hidden);
  Tensor g_up = conv1_.backward(g_hidden, cache.conv1);
  g_up += shortcut_.backward(grad_out, cache.shortcut);
  return upsample_nearest2x_backward(g_up);
}

void ResidualUpStage::collect(ParamList& out) {
  conv1_.collect(out);
  conv2_.collect(out);
  shortcut_.collect(out);
}

void ResidualUpStage::collect(ConstParamList& out) const {
  conv1_.collect(out);
  conv2_.collect(out);
  shortcut_.collect(out);
}

}  // namespace dskd::nn
