#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../oracles.hpp"
#include "ssc/depth_fusion.hpp"
#include "ssc/errors.hpp"

using namespace ssc;

namespace {

DepthMap random_depth(std::mt19937_64& rng, int h, int w, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  DepthMap d(h, w);
  for (auto& v : d.depth) v = static_cast<float>(u(rng));
  return d;
}

Conv3d random_conv3d(std::mt19937_64& rng, int in, int out, int k) {
  Conv3d c(in, out, k);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& v : c.weight) v = static_cast<float>(u(rng));
  for (auto& v : c.bias) v = static_cast<float>(u(rng));
  return c;
}

VolumeFusionWeights random_fusion(std::mt19937_64& rng, int c) {
  VolumeFusionWeights w;
  w.fuse = random_conv3d(rng, 2, c, 3);
  w.enc1 = random_conv3d(rng, c, c, 3);
  w.enc2 = random_conv3d(rng, c, 2 * c, 3);
  w.dec = random_conv3d(rng, 3 * c, c, 3);
  w.ca = {oracle::random_matrix(rng, 2, c), {0.1F, -0.1F}, oracle::random_matrix(rng, c, 2), std::vector<float>(static_cast<std::size_t>(c), 0.0F)};
  w.head = random_conv3d(rng, c, 1, 3);
  return w;
}

DepthVolume random_volume(std::mt19937_64& rng, int d, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DepthVolume v(d, h, w);
  for (auto& x : v.data) x = static_cast<float>(u(rng));
  return v;
}

}  // namespace

TEST(Curriculum, EndpointsAndLinearMidpoint) {
  CurriculumSchedule s{100, 0.0, ScheduleShape::linear};
  EXPECT_EQ(lambda_at(s, 0), 1.0);
  EXPECT_EQ(lambda_at(s, 100), 0.0);
  EXPECT_DOUBLE_EQ(lambda_at(s, 25), 0.75);
}

TEST(Curriculum, WarmupHoldsOneThenDecays) {
  CurriculumSchedule s{1000, 0.2, ScheduleShape::linear};
  EXPECT_EQ(lambda_at(s, 199), 1.0);
  EXPECT_DOUBLE_EQ(lambda_at(s, 600), 0.5);
}

TEST(Curriculum, CosineIsNonIncreasing) {
  CurriculumSchedule s{5000, 0.1, ScheduleShape::cosine};
  double prev = lambda_at(s, 0);
  EXPECT_EQ(prev, 1.0);
  for (std::int64_t t = 1; t <= 5000; ++t) {
    const double l = lambda_at(s, t);
    EXPECT_LE(l, prev);
    prev = l;
  }
  EXPECT_EQ(prev, 0.0);
}

TEST(Curriculum, OutOfRangeStepThrows) {
  CurriculumSchedule s{100, 0.2, ScheduleShape::linear};
  EXPECT_THROW(lambda_at(s, -1), InputError);
  EXPECT_THROW(lambda_at(s, 101), InputError);
  EXPECT_THROW(parse_schedule_shape("step"), InputError);
}

TEST(CompleteDepth, DenseInputUnchanged) {
  std::mt19937_64 rng(21);
  const DepthMap d = random_depth(rng, 5, 6, 1, 50);
  EXPECT_EQ(complete_depth(d).depth, d.depth);
}

TEST(CompleteDepth, SingleSourceFillsConstant) {
  DepthMap d(3, 3);
  d.at(1, 1) = 5.0F;
  for (float v : complete_depth(d).depth) EXPECT_EQ(v, 5.0F);
}

TEST(CompleteDepth, TwoCornersMatchIdwOracle) {
  DepthMap d(4, 5);
  d.at(0, 0) = 3.0F;
  d.at(3, 4) = 11.0F;
  const DepthMap out = complete_depth(d);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) {
      if (d.valid(y, x)) {
        EXPECT_EQ(out.at(y, x), d.at(y, x));
      } else {
        EXPECT_NEAR(out.at(y, x), oracle::idw(d, y, x, 2.0), 1e-5);
      }
    }
}

TEST(CompleteDepth, PreservesValidPixelsAndRejectsEmpty) {
  std::mt19937_64 rng(22);
  DepthMap d = random_depth(rng, 8, 8, 2, 40);
  std::bernoulli_distribution drop(0.7);
  for (auto& v : d.depth)
    if (drop(rng)) v = 0.0F;
  const DepthMap out = complete_depth(d);
  for (std::size_t i = 0; i < d.depth.size(); ++i) {
    if (d.depth[i] > 0) {
      EXPECT_EQ(out.depth[i], d.depth[i]);
    }
    EXPECT_GT(out.depth[i], 0.0F);
  }
  EXPECT_THROW(complete_depth(DepthMap(3, 3)), InputError);
}

TEST(FuseDepth, EndpointsMidpointAndBounds) {
  std::mt19937_64 rng(23);
  const DepthMap a = random_depth(rng, 6, 6, 1, 30);
  const DepthMap b = random_depth(rng, 6, 6, 1, 30);
  EXPECT_EQ(fuse_depth(a, b, 1.0).depth, a.depth);
  EXPECT_EQ(fuse_depth(a, b, 0.0).depth, b.depth);
  DepthMap two(1, 1, 2.0F), four(1, 1, 4.0F);
  EXPECT_FLOAT_EQ(fuse_depth(two, four, 0.5).depth[0], 3.0F);
  for (double lam : {0.1, 0.37, 0.9}) {
    const DepthMap f = fuse_depth(a, b, lam);
    for (std::size_t i = 0; i < f.depth.size(); ++i) {
      EXPECT_GE(f.depth[i], std::min(a.depth[i], b.depth[i]));
      EXPECT_LE(f.depth[i], std::max(a.depth[i], b.depth[i]));
    }
  }
  EXPECT_THROW(fuse_depth(a, b, 1.5), InputError);
  EXPECT_THROW(fuse_depth(a, DepthMap(5, 6, 1.0F), 0.5), ShapeError);
}

TEST(DepthVolumes, SoftBinConcentratesAtBinCentre) {
  const DepthBins bins{32, 2.0, 58.0};
  const auto p = soft_bin(bins.center(5), bins, 0.25);
  EXPECT_GE(p[5], 0.99);
}

TEST(DepthVolumes, BothVolumesAreDistributions) {
  std::mt19937_64 rng(24);
  const DepthBins bins{16, 2.0, 40.0};
  const FeatureMap f = oracle::random_map(rng, 6, 7, 4);
  DepthMap d = random_depth(rng, 6, 7, 0.5, 60.0);
  DepthNetWeights net;
  net.encoder = Conv2d(5, 4, 3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& v : net.encoder.weight) v = static_cast<float>(u(rng));
  net.mono_head = oracle::random_matrix(rng, 16, 4);
  net.mono_bias.assign(16, 0.1F);
  const auto vols = build_depth_volumes(d, f, net, bins);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x) {
      double sm = 0.0, ss = 0.0;
      for (int b = 0; b < 16; ++b) {
        EXPECT_GE(vols.mono.at(b, y, x), 0.0F);
        EXPECT_GE(vols.stereo.at(b, y, x), 0.0F);
        sm += vols.mono.at(b, y, x);
        ss += vols.stereo.at(b, y, x);
      }
      EXPECT_NEAR(sm, 1.0, 1e-5);
      EXPECT_NEAR(ss, 1.0, 1e-5);
    }
  std::size_t outside = 0;
  for (float v : d.depth) outside += v < 2.0F || v > 40.0F;
  EXPECT_EQ(vols.clamped, outside);
  EXPECT_EQ(vols.encoded.channels, 4);
}

TEST(DepthVolumes, SingleBinHoldsAllMass) {
  const DepthBins bins{1, 2.0, 58.0};
  DepthNetWeights net;
  net.encoder = Conv2d(3, 2, 1);
  net.mono_head = Matrix(1, 2, 1.0F);
  net.mono_bias = {0.0F};
  const auto vols = build_depth_volumes(DepthMap(3, 3, 10.0F), FeatureMap(3, 3, 2, 1.0F), net, bins);
  for (float v : vols.mono.data) EXPECT_EQ(v, 1.0F);
  for (float v : vols.stereo.data) EXPECT_EQ(v, 1.0F);
}

TEST(CgAttention, SingleBinCollapses) {
  DepthVolume q(1, 2, 2), kv(1, 2, 2);
  q.data = {0.3F, 0.1F, 0.7F, 0.2F};
  kv.data = {0.9F, 0.4F, 0.5F, 0.6F};
  const DepthVolume out = cg_attention_3d(q, kv, CgAttentionParams::identity(2));
  // A = 1, V_hat = V, P_conf = 1 over a single bin.
  EXPECT_EQ(out.data, kv.data);
}

TEST(CgAttention, TwoBinHandComputed) {
  DepthVolume q(2, 1, 1), kv(2, 1, 1);
  q.data = {0.2F, 0.8F};
  kv.data = {0.6F, 0.4F};
  CgAttentionParams p = CgAttentionParams::identity(1);
  p.value_w = 2.0F;
  p.value_b = 0.5F;
  const double q0 = 0.2F, q1 = 0.8F, k0 = 0.6F, k1 = 0.4F;
  const double a00 = std::exp(q0 * k0) / (std::exp(q0 * k0) + std::exp(q0 * k1));
  const double a10 = std::exp(q1 * k0) / (std::exp(q1 * k0) + std::exp(q1 * k1));
  const double v0 = 2 * k0 + 0.5, v1 = 2 * k1 + 0.5;
  const double c0 = std::exp(2 * q0 + 0.5) / (std::exp(2 * q0 + 0.5) + std::exp(2 * q1 + 0.5));
  const double want0 = c0 * (a00 * v0 + (1 - a00) * v1);
  const double want1 = (1 - c0) * (a10 * v0 + (1 - a10) * v1);
  const DepthVolume out = cg_attention_3d(q, kv, p);
  EXPECT_NEAR(out.data[0], want0, 1e-6);
  EXPECT_NEAR(out.data[1], want1, 1e-6);
  const auto a = cg_attention_weights(q, kv, p, 0, 0);
  EXPECT_NEAR(a[0], a00, 1e-6);
  EXPECT_NEAR(a[2], a10, 1e-6);
}

TEST(CgAttention, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(25);
  const DepthVolume q = random_volume(rng, 8, 3, 4);
  const DepthVolume kv = random_volume(rng, 8, 3, 4);
  CgAttentionParams p;
  p.dim = 3;
  std::uniform_real_distribution<double> u(-2, 2);
  for (auto* v : {&p.query_w, &p.query_b, &p.key_w, &p.key_b}) {
    v->resize(3);
    for (auto& x : *v) x = static_cast<float>(u(rng));
  }
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) {
      const auto a = cg_attention_weights(q, kv, p, y, x);
      for (int r = 0; r < 8; ++r) {
        double s = 0.0;
        for (int k = 0; k < 8; ++k) s += a[static_cast<std::size_t>(r * 8 + k)];
        EXPECT_NEAR(s, 1.0, 1e-5);
      }
    }
  // A shared key offset shifts every logit of a row by the same amount.
  CgAttentionParams shifted = p;
  for (auto& v : shifted.key_b) v += 3.0F;
  const DepthVolume o1 = cg_attention_3d(q, kv, p);
  const DepthVolume o2 = cg_attention_3d(q, kv, shifted);
  for (std::size_t i = 0; i < o1.data.size(); ++i) EXPECT_NEAR(o1.data[i], o2.data[i], 1e-5);
  EXPECT_THROW(cg_attention_3d(q, random_volume(rng, 7, 3, 4), p), ShapeError);
}

TEST(ChannelAttention, ZeroMlpGivesHalfGates) {
  std::mt19937_64 rng(26);
  const VoxelGrid g = oracle::random_grid(rng, {3, 3, 3}, 4);
  ChannelAttention ca{Matrix(2, 4), {0.0F, 0.0F}, Matrix(4, 2), {0.0F, 0.0F, 0.0F, 0.0F}};
  std::vector<float> gates;
  const VoxelGrid out = channel_attention(g, ca, &gates);
  for (float v : gates) EXPECT_EQ(v, 0.5F);
  for (std::size_t i = 0; i < g.data.size(); ++i) EXPECT_EQ(out.data[i], 0.5F * g.data[i]);
}

TEST(FuseVolumes, DistributionAndDeterminism) {
  std::mt19937_64 rng(27);
  const VolumeFusionWeights w = random_fusion(rng, 4);
  const DepthVolume a = random_volume(rng, 8, 5, 6);
  const DepthVolume b = random_volume(rng, 8, 5, 6);
  const DepthVolume d1 = fuse_volumes(a, b, w);
  const DepthVolume d2 = fuse_volumes(a, b, w);
  EXPECT_EQ(d1.data, d2.data);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += d1.at(k, y, x);
      EXPECT_NEAR(s, 1.0, 1e-5);
    }
  const DepthVolume e1 = fuse_volumes(a, a, w);
  EXPECT_TRUE(all_finite(e1.data));
  EXPECT_THROW(fuse_volumes(a, random_volume(rng, 8, 5, 5), w), ShapeError);
}
