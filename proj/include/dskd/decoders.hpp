// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <random>

#include "dskd/backbone.hpp"
#include "dskd/blocks.hpp"
#include "dskd/bottleneck.hpp"

namespace dskd {

enum class StudentRole { Local, Global };

std::string to_string(StudentRole role);

/// Student decoder mirroring the teacher: three upsampling residual stages
/// produce levels 3, 2, 1 (in that order) from the bottleneck embedding.
/// Both roles share the architecture but never parameters.
class StudentDecoder {
 public:
  struct Cache {
    std::array<nn::ResidualUpStage::Cache, 3> stages;  // indexed by level - 1
    std::array<Tensor, 2> stage_inputs;  // [i] = relu(level i+2 output), input of the level i+1 stage
  };

  StudentDecoder() = default;
  StudentDecoder(StudentRole role, const std::array<Shape, 4>& stage_shapes);
  void init(std::mt19937_64& rng);

  StudentRole role() const { return role_; }
  std::array<Shape, 3> output_shapes() const { return {shapes_[0], shapes_[1], shapes_[2]}; }

  FeaturePyramid forward(const Embedding& embedding, Cache* cache = nullptr) const;
  /// `grad_levels[l-1]` is dLoss/dF_S^l. Returns the gradient w.r.t. the embedding.
  Tensor backward(const std::array<Tensor, 3>& grad_levels, const Cache& cache);

  void collect(nn::ParamList& out);
  void collect(nn::ConstParamList& out) const;

 private:
  StudentRole role_ = StudentRole::Local;
  std::array<Shape, 4> shapes_{};
  std::array<nn::ResidualUpStage, 3> stages_;  // indexed by level - 1
};

FeaturePyramid decode(const StudentDecoder& decoder, const Embedding& embedding);

}  // namespace dskd
