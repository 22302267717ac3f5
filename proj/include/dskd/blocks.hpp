// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>

#include "dskd/nn.hpp"

namespace dskd::nn {

/// Stride-2 residual stage: relu(conv3x3(relu(conv3x3_s2(x))) + conv1x1_s2(x)).
class ResidualDownStage {
 public:
  struct Cache {
    ConvCache conv1, conv2, shortcut;
    Tensor hidden;  // relu(conv1(x))
    Tensor out;
  };

  ResidualDownStage() = default;
  ResidualDownStage(const std::string& name, int in_channels, int out_channels);
  void init(std::mt19937_64& rng);

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
  Tensor backward(const Tensor& grad_out, const Cache& cache, bool want_input_grad = true);
  void collect(ParamList& out);
  void collect(ConstParamList& out) const;

 private:
  Conv2d conv1_, conv2_, shortcut_;
};

/// Reversed residual stage used by the student decoders: nearest 2x
/// upsampling followed by conv3x3(relu(conv3x3(u))) + conv1x1(u). The output
/// is left linear so it can match teacher features in direction.
class ResidualUpStage {
 public:
  struct Cache {
    ConvCache conv1, conv2, shortcut;
    Tensor hidden;
  };

  ResidualUpStage() = default;
  ResidualUpStage(const std::string& name, int in_channels, int out_channels);
  void init(std::mt19937_64& rng);

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
  Tensor backward(const Tensor& grad_out, const Cache& cache);
  void collect(ParamList& out);
  void collect(ConstParamList& out) const;

 private:
  Conv2d conv1_, conv2_, shortcut_;
};

}  // namespace dskd::nn
