// SPDX-License-Identifier: Apache-2.0
#include "dskd/decoders.hpp"

#include "dskd/error.hpp"

namespace dskd {

std::string to_string(StudentRole role) { return role == StudentRole::Local ? "local" : "global"; }

StudentDecoder::StudentDecoder(StudentRole role, const std::array<Shape, 4>& s)
    : role_(role), shapes_(s) {
  const std::string prefix = role == StudentRole::Local ? "s_loc" : "s_glo";
  for (int l = 3; l >= 1; --l) {
    if (s[l - 1].h != 2 * s[l].h || s[l - 1].w != 2 * s[l].w) {
      throw ConfigError("decoder: level " + std::to_string(l) + " is not twice level " +
                        std::to_string(l + 1));
    }
    stages_[l - 1] =
        nn::ResidualUpStage(prefix + ".level" + std::to_string(l), s[l].c, s[l - 1].c);
  }
}

void StudentDecoder::init(std::mt19937_64& rng) {
  for (int l = 3; l >= 1; --l) stages_[l - 1].init(rng);
}

FeaturePyramid StudentDecoder::forward(const Embedding& embedding, Cache* cache) const {
  require_shape(embedding.values, shapes_[3], "decoder embedding");
  FeaturePyramid out;
  Tensor x = embedding.values;
  for (int l = 3; l >= 1; --l) {
    out.levels[l - 1] = stages_[l - 1].forward(x, cache ? &cache->stages[l - 1] : nullptr);
    if (l > 1) {
      x = nn::relu(out.levels[l - 1]);
      if (cache) cache->stage_inputs[l - 2] = x;
    }
  }
  return out;
}

Tensor StudentDecoder::backward(const std::array<Tensor, 3>& grad_levels, const Cache& cache) {
  Tensor carry;  // gradient flowing into level l's output from level l-1's stage
  for (int l = 1; l <= 3; ++l) {
    Tensor g = grad_levels[l - 1];
    require_shape(g, shapes_[l - 1], "decoder gradient");
    if (!carry.empty()) g += nn::relu_backward(carry, cache.stage_inputs[l - 2]);
    carry = stages_[l - 1].backward(g, cache.stages[l - 1]);
  }
  return carry;
}

void StudentDecoder::collect(nn::ParamList& out) {
  for (int l = 3; l >= 1; --l) stages_[l - 1].collect(out);
}

void StudentDecoder::collect(nn::ConstParamList& out) const {
  for (int l = 3; l >= 1; --l) stages_[l - 1].collect(out);
}

FeaturePyramid decode(const StudentDecoder& decoder, const Embedding& embedding) {
  return decoder.forward(embedding);
}

}  // namespace dskd
