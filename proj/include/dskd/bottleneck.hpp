// SPDX-License-Identifier: Apache-2.0
//
// One-class bottleneck embeddings feeding the two student decoders.
//
//   OcbeLocal:  levels 1-3 aligned to level-3 resolution with stride-2
//               convolutions, concatenated, then one residual stage.
//   OcbeGlobal: a trainable stage-4 residual stage on level 3 followed by
//               the global context condensing block (Gccb).
#pragma once

#include <array>
#include <optional>
#include <random>

#include "dskd/backbone.hpp"
#include "dskd/blocks.hpp"

namespace dskd {

enum class EmbeddingOrigin { Local, Global };

struct Embedding {
  Tensor values;
  EmbeddingOrigin origin = EmbeddingOrigin::Local;
};

class OcbeLocal {
 public:
  struct Cache {
    nn::ConvCache l1_down1, l1_down2, l2_down;
    Tensor l1_hidden, l1_aligned, l2_aligned;
    nn::ResidualDownStage::Cache stage;
  };

  OcbeLocal() = default;
  explicit OcbeLocal(const std::array<Shape, 4>& stage_shapes);
  void init(std::mt19937_64& rng);

  Embedding forward(const FeaturePyramid& pyramid, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients; no gradient is propagated to the teacher.
  void backward(const Tensor& grad_embedding, const Cache& cache);

  void collect(nn::ParamList& out);
  void collect(nn::ConstParamList& out) const;

 private:
  std::array<Shape, 4> shapes_{};
  nn::Conv2d l1_down1_, l1_down2_, l2_down_;
  nn::ResidualDownStage stage_;
};

/// Compresses a feature map to a single 1 x 1 x g vector by global average
/// pooling, then restores the spatial size by broadcasting that vector and
/// applying a trainable 3x3 convolution. 1x1 projections to and from g
/// channels exist only when g differs from the input width.
class Gccb {
 public:
  struct Cache {
    nn::ConvCache down, restore, up;
    Shape in_shape, projected_shape;
    Tensor restored;  // after relu
  };

  Gccb() = default;
  Gccb(int in_channels, int g);
  void init(std::mt19937_64& rng);

  int channels() const { return g_; }
  int in_channels() const { return in_; }
  bool projected() const { return down_.has_value(); }

  /// The 1 x 1 x g condensed vector for `x`.
  Tensor condense(const Tensor& x) const;
  Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
  Tensor backward(const Tensor& grad_out, const Cache& cache);

  void collect(nn::ParamList& out);
  void collect(nn::ConstParamList& out) const;

 private:
  int in_ = 0, g_ = 0;
  std::optional<nn::Conv2d> down_, up_;
  nn::Conv2d restore_;
};

class OcbeGlobal {
 public:
  struct Cache {
    nn::ResidualDownStage::Cache stage;
    Gccb::Cache gccb;
  };

  OcbeGlobal() = default;
  /// `gccb_channels` = std::nullopt builds the ablation variant without the
  /// condensing block (plain trainable stage 4).
  OcbeGlobal(const std::array<Shape, 4>& stage_shapes, std::optional<int> gccb_channels);
  void init(std::mt19937_64& rng);

  const std::optional<Gccb>& gccb() const { return gccb_; }

  Embedding forward(const Tensor& stage3_feature, Cache* cache = nullptr) const;
  void backward(const Tensor& grad_embedding, const Cache& cache);

  void collect(nn::ParamList& out);
  void collect(nn::ConstParamList& out) const;

 private:
  std::array<Shape, 4> shapes_{};
  nn::ResidualDownStage stage_;
  std::optional<Gccb> gccb_;
};

Embedding ocbe_local(const OcbeLocal& ocbe, const FeaturePyramid& pyramid);
Tensor gccb(const Gccb& block, const Tensor& feature);
Embedding ocbe_global(const OcbeGlobal& ocbe, const Tensor& stage3_feature);

}  // namespace dskd
