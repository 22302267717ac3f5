// SPDX-License-Identifier: Apache-2.0
#include "dskd/bottleneck.hpp"

#include "dskd/error.hpp"

namespace dskd {

namespace {

void check_pyramid_topology(const std::array<Shape, 4>& s) {
  for (int l = 0; l < 3; ++l) {
    if (s[l].h != 2 * s[l + 1].h || s[l].w != 2 * s[l + 1].w) {
      throw ConfigError("stage shapes must halve per level; got " + to_string(s[l]) + " then " +
                        to_string(s[l + 1]));
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// OcbeLocal

OcbeLocal::OcbeLocal(const std::array<Shape, 4>& s)
    : shapes_(s),
      l1_down1_("ocbe_loc.l1_down1", s[0].c, s[1].c, 3, 2, 1),
      l1_down2_("ocbe_loc.l1_down2", s[1].c, s[2].c, 3, 2, 1),
      l2_down_("ocbe_loc.l2_down", s[1].c, s[2].c, 3, 2, 1),
      stage_("ocbe_loc.stage", 3 * s[2].c, s[3].c) {
  check_pyramid_topology(s);
}

void OcbeLocal::init(std::mt19937_64& rng) {
  l1_down1_.init(rng);
  l1_down2_.init(rng);
  l2_down_.init(rng);
  stage_.init(rng);
}

Embedding OcbeLocal::forward(const FeaturePyramid& pyramid, Cache* cache) const {
  for (int l = 0; l < 3; ++l) require_shape(pyramid.levels[l], shapes_[l], "OCBE_loc input");
  Tensor l1_hidden = nn::relu(l1_down1_.forward(pyramid.levels[0], cache ? &cache->l1_down1 : nullptr));
  Tensor l1 = nn::relu(l1_down2_.forward(l1_hidden, cache ? &cache->l1_down2 : nullptr));
  Tensor l2 = nn::relu(l2_down_.forward(pyramid.levels[1], cache ? &cache->l2_down : nullptr));
  const Tensor fused = nn::concat_channels({&l1, &l2, &pyramid.levels[2]});
  Embedding emb{stage_.forward(fused, cache ? &cache->stage : nullptr), EmbeddingOrigin::Local};
  if (cache) {
    cache->l1_hidden = std::move(l1_hidden);
    cache->l1_aligned = std::move(l1);
    cache->l2_aligned = std::move(l2);
  }
  return emb;
}

void OcbeLocal::backward(const Tensor& grad_embedding, const Cache& cache) {
  const Tensor g_fused = stage_.backward(grad_embedding, cache.stage);
  const int c = shapes_[2].c;
  auto parts = nn::split_channels(g_fused, {c, c, c});
  Tensor g_l1_hidden = nn::relu_backward(
      l1_down2_.backward(nn::relu_backward(parts[0], cache.l1_aligned), cache.l1_down2),
      cache.l1_hidden);
  l1_down1_.backward(g_l1_hidden, cache.l1_down1, false);
  l2_down_.backward(nn::relu_backward(parts[1], cache.l2_aligned), cache.l2_down, false);
}

void OcbeLocal::collect(nn::ParamList& out) {
  l1_down1_.collect(out);
  l1_down2_.collect(out);
  l2_down_.collect(out);
  stage_.collect(out);
}

void OcbeLocal::collect(nn::ConstParamList& out) const {
  l1_down1_.collect(out);
  l1_down2_.collect(out);
  l2_down_.collect(out);
  stage_.collect(out);
}

// ---------------------------------------------------------------------------
// Gccb

Gccb::Gccb(int in_channels, int g) : in_(in_channels), g_(g) {
  if (g <= 0) throw ConfigError("GCCB channel count g must be positive, got " + std::to_string(g));
  if (in_channels <= 0) throw ConfigError("GCCB input channel count must be positive");
  if (g != in_channels) {
    down_.emplace("ocbe_glo.gccb.down_proj", in_channels, g, 1, 1, 0);
    up_.emplace("ocbe_glo.gccb.up_proj", g, in_channels, 1, 1, 0);
  }
  restore_ = nn::Conv2d("ocbe_glo.gccb.restore", g, g, 3, 1, 1);
}

void Gccb::init(std::mt19937_64& rng) {
  if (down_) down_->init(rng);
  restore_.init(rng);
  if (up_) up_->init(rng);
}

Tensor Gccb::condense(const Tensor& x) const {
  if (x.c() != in_) throw InputError("GCCB: channel mismatch, got " + to_string(x.shape()));
  return nn::global_avg_pool(down_ ? down_->forward(x) : x);
}

Tensor Gccb::forward(const Tensor& x, Cache* cache) const {
  if (x.c() != in_) throw InputError("GCCB: channel mismatch, got " + to_string(x.shape()));
  const Tensor projected = down_ ? down_->forward(x, cache ? &cache->down : nullptr) : x;
  const Tensor spread = nn::broadcast(nn::global_avg_pool(projected), x.h(), x.w());
  Tensor restored = nn::relu(restore_.forward(spread, cache ? &cache->restore : nullptr));
  Tensor out = up_ ? up_->forward(restored, cache ? &cache->up : nullptr) : restored;
  if (cache) {
    cache->in_shape = x.shape();
    cache->projected_shape = projected.shape();
    cache->restored = std::move(restored);
  }
  return out;
}

Tensor Gccb::backward(const Tensor& grad_out, const Cache& cache) {
  Tensor g = up_ ? up_->backward(grad_out, cache.up) : grad_out;
  g = nn::relu_backward(g, cache.restored);
  g = restore_.backward(g, cache.restore);
  g = nn::global_avg_pool_backward(nn::broadcast_backward(g), cache.projected_shape);
  return down_ ? down_->backward(g, cache.down) : g;
}

void Gccb::collect(nn::ParamList& out) {
  if (down_) down_->collect(out);
  restore_.collect(out);
  if (up_) up_->collect(out);
}

void Gccb::collect(nn::ConstParamList& out) const {
  if (down_) down_->collect(out);
  restore_.collect(out);
  if (up_) up_->collect(out);
}

// ---------------------------------------------------------------------------
// OcbeGlobal

OcbeGlobal::OcbeGlobal(const std::array<Shape, 4>& s, std::optional<int> gccb_channels)
    : shapes_(s), stage_("ocbe_glo.stage4", s[2].c, s[3].c) {
  check_pyramid_topology(s);
  if (gccb_channels) gccb_.emplace(s[3].c, *gccb_channels);
}

void OcbeGlobal::init(std::mt19937_64& rng) {
  stage_.init(rng);
  if (gccb_) gccb_->init(rng);
}

Embedding OcbeGlobal::forward(const Tensor& stage3_feature, Cache* cache) const {
  require_shape(stage3_feature, shapes_[2], "OCBE_glo input");
  Tensor x = stage_.forward(stage3_feature, cache ? &cache->stage : nullptr);
  if (gccb_) x = gccb_->forward(x, cache ? &cache->gccb : nullptr);
  return {std::move(x), EmbeddingOrigin::Global};
}

void OcbeGlobal::backward(const Tensor& grad_embedding, const Cache& cache) {
  const Tensor g = gccb_ ? gccb_->backward(grad_embedding, cache.gccb) : grad_embedding;
  stage_.backward(g, cache.stage, false);
}

void OcbeGlobal::collect(nn::ParamList& out) {
  stage_.collect(out);
  if (gccb_) gccb_->collect(out);
}

void OcbeGlobal::collect(nn::ConstParamList& out) const {
  stage_.collect(out);
  if (gccb_) gccb_->collect(out);
}

Embedding ocbe_local(const OcbeLocal& ocbe, const FeaturePyramid& pyramid) {
  return ocbe.forward(pyramid);
}

Tensor gccb(const Gccb& block, const Tensor& feature) { return block.forward(feature); }

Embedding ocbe_global(const OcbeGlobal& ocbe, const Tensor& stage3_feature) {
  return ocbe.forward(stage3_feature);
}

}  // namespace dskd
