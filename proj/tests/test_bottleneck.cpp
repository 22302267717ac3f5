// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "dskd/bottleneck.hpp"
#include "dskd/error.hpp"
#include "oracles.hpp"

using namespace dskd;

namespace {

FeaturePyramid tiny_pyramid(std::mt19937_64& rng, int size = 64) {
  const auto s = tiny_stage_shapes(size);
  return oracle::random_pyramid({s[0], s[1], s[2]}, rng);
}

std::size_t count(const Gccb& g) {
  nn::ConstParamList p;
  g.collect(p);
  return nn::parameter_count(p);
}

}  // namespace

TEST(OcbeLocal, TinyEmbeddingShape) {
  std::mt19937_64 rng(1);
  OcbeLocal ocbe(tiny_stage_shapes(64));
  ocbe.init(rng);
  const Embedding e = ocbe_local(ocbe, tiny_pyramid(rng));
  EXPECT_EQ(e.values.shape(), (Shape{4, 4, 128}));
  EXPECT_EQ(e.origin, EmbeddingOrigin::Local);
}

TEST(OcbeLocal, ZeroPyramidGivesFiniteEmbedding) {
  std::mt19937_64 rng(2);
  const auto s = tiny_stage_shapes(64);
  OcbeLocal ocbe(s);
  ocbe.init(rng);
  FeaturePyramid zero;
  for (int l = 0; l < 3; ++l) zero.levels[l] = Tensor(s[l]);
  EXPECT_TRUE(ocbe.forward(zero).values.all_finite());
}

TEST(OcbeLocal, DeterministicForward) {
  std::mt19937_64 rng(3);
  OcbeLocal ocbe(tiny_stage_shapes(64));
  ocbe.init(rng);
  const FeaturePyramid p = tiny_pyramid(rng);
  EXPECT_EQ(ocbe.forward(p).values, ocbe.forward(p).values);
}

TEST(OcbeLocal, RejectsMismatchedPyramid) {
  std::mt19937_64 rng(4);
  OcbeLocal ocbe(tiny_stage_shapes(64));
  EXPECT_THROW(ocbe.forward(tiny_pyramid(rng, 32)), InputError);
  auto bad = tiny_stage_shapes(64);
  bad[1].h = 15;
  EXPECT_THROW(OcbeLocal{bad}, ConfigError);
}

TEST(Gccb, ShapePreservedForFullWidth) {
  std::mt19937_64 rng(5);
  Gccb g(2048, 1024);
  g.init(rng);
  const Tensor x = oracle::random_tensor({2, 2, 2048}, rng);
  EXPECT_EQ(g.forward(x).shape(), x.shape());
  EXPECT_TRUE(g.projected());
}

TEST(Gccb, NoProjectionsWhenWidthsMatch) {
  const Gccb same(128, 128);
  const Gccb narrow(128, 64);
  EXPECT_FALSE(same.projected());
  EXPECT_TRUE(narrow.projected());
  // restore 3x3 conv only: 9*g*g + g
  EXPECT_EQ(count(same), 9u * 128 * 128 + 128);
  // + down (128*64 + 64) + up (64*128 + 128)
  EXPECT_EQ(count(narrow), 9u * 64 * 64 + 64 + 128 * 64 + 64 + 64 * 128 + 128);
}

TEST(Gccb, ConstantInputPoolsToProjectedVector) {
  std::mt19937_64 rng(6);
  Gccb g(8, 4);
  g.init(rng);
  const Tensor v = oracle::random_tensor({1, 1, 8}, rng);
  Tensor x(3, 5, 8);
  for (int pos = 0; pos < 15; ++pos) std::copy_n(v.data(), 8, x.pixel(pos).data());
  const Tensor pooled = g.condense(x);
  ASSERT_EQ(pooled.shape(), (Shape{1, 1, 4}));
  // projection of v by the 1x1 down conv, written out by hand
  nn::ConstParamList params;
  g.collect(params);
  const nn::Param& w = *params[0];
  const nn::Param& b = *params[1];
  ASSERT_EQ(w.name, "ocbe_glo.gccb.down_proj.weight");
  for (int co = 0; co < 4; ++co) {
    double expect = b.value[co];
    for (int ci = 0; ci < 8; ++ci) expect += w.value[ci * 4 + co] * v.values()[ci];
    EXPECT_NEAR(pooled.values()[co], expect, 1e-12);
  }
}

TEST(Gccb, PooledVectorIgnoresSpatialPermutation) {
  std::mt19937_64 rng(7);
  Gccb g(6, 6);
  g.init(rng);
  const Tensor x = oracle::random_tensor({4, 4, 6}, rng);
  std::vector<int> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor y(x.shape());
  for (int i = 0; i < 16; ++i) std::copy_n(x.pixel(perm[i]).data(), 6, y.pixel(i).data());
  const Tensor a = g.condense(x), b = g.condense(y);
  for (int c = 0; c < 6; ++c) EXPECT_NEAR(a.values()[c], b.values()[c], 1e-12);
}

TEST(Gccb, RejectsNonPositiveWidth) {
  EXPECT_THROW(Gccb(8, 0), ConfigError);
  EXPECT_THROW(Gccb(8, -3), ConfigError);
}

TEST(OcbeGlobal, TinyEmbeddingShape) {
  std::mt19937_64 rng(8);
  OcbeGlobal ocbe(tiny_stage_shapes(64), 64);
  ocbe.init(rng);
  const Embedding e = ocbe_global(ocbe, tiny_pyramid(rng).level(3));
  EXPECT_EQ(e.values.shape(), (Shape{4, 4, 128}));
  EXPECT_EQ(e.origin, EmbeddingOrigin::Global);
  EXPECT_TRUE(e.values.all_finite());
}

TEST(OcbeGlobal, ZeroInputGivesFiniteOutput) {
  std::mt19937_64 rng(9);
  OcbeGlobal ocbe(tiny_stage_shapes(64), 64);
  ocbe.init(rng);
  EXPECT_TRUE(ocbe.forward(Tensor(8, 8, 64)).values.all_finite());
}

TEST(OcbeGlobal, BypassEqualsPlainStage4) {
  const auto s = tiny_stage_shapes(64);
  std::mt19937_64 rng_a(10), rng_b(10);
  OcbeGlobal with(s, 64), without(s, std::nullopt);
  with.init(rng_a);
  without.init(rng_b);  // stage 4 draws first, so both get the same stage-4 weights
  std::mt19937_64 rng(11);
  const Tensor x = tiny_pyramid(rng).level(3);
  ASSERT_FALSE(without.gccb().has_value());
  const Tensor plain = without.forward(x).values;
  ASSERT_TRUE(with.gccb().has_value());
  OcbeGlobal::Cache cache;
  with.forward(x, &cache);
  // stage-4 output of the GCCB variant, before the block
  EXPECT_EQ(cache.stage.out, plain);
}

TEST(OcbeGlobal, GccbOutputIsSpatiallyUniformInTheInterior) {
  std::mt19937_64 rng(12);
  const auto s = tiny_stage_shapes(128);  // 8x8 embedding, 6x6 interior
  OcbeGlobal ocbe(s, 64);
  ocbe.init(rng);
  const Tensor e = ocbe.forward(oracle::random_tensor(s[2], rng)).values;
  for (int y = 1; y < e.h() - 1; ++y) {
    for (int x = 1; x < e.w() - 1; ++x) {
      for (int c = 0; c < e.c(); ++c) EXPECT_NEAR(e(y, x, c), e(1, 1, c), 1e-12);
    }
  }
}
