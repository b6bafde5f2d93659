#include <gtest/gtest.h>

#include <cmath>

#include "freescale/attention_fusion.hpp"
#include "freescale/oracle.hpp"
#include "freescale/rng.hpp"

using namespace freescale;

namespace {

AttentionWeights random_weights(Rng& rng, std::size_t dim) {
  const double sd = 1.0 / std::sqrt(double(dim));
  return {rng.normal_tensor({dim, dim}, sd), rng.normal_tensor({dim, dim}, sd), rng.normal_tensor({dim, dim}, sd),
          rng.normal_tensor({dim, dim}, sd)};
}

}  // namespace

TEST(SelfAttention, SingleTokenIsValueThenOutputProjection) {
  Rng rng(1);
  const AttentionWeights w = random_weights(rng, 3);
  const Tensor h = rng.normal_tensor({1, 3, 1, 1});
  const Tensor out = self_attention(h, w);
  // With one token the softmax weight is 1: out = (x W_v) W_o.
  const Tensor x = h.reshaped({1, 3});
  const Tensor expected = linear(linear(x, w.w_v), w.w_o);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out[c], expected[c], 1e-6);
}

TEST(SelfAttention, ZeroQueryKeyGivesMeanOfValues) {
  Tensor zero({2, 2});
  const AttentionWeights w{zero, zero, AttentionWeights::identity(2).w_v, AttentionWeights::identity(2).w_o};
  const Tensor h({1, 2, 1, 2}, {1.0f, 3.0f, -2.0f, 4.0f});  // tokens (1,-2) and (3,4)
  const Tensor out = self_attention(h, w);
  EXPECT_NEAR(out.at(0, 0, 0, 0), 2.0, 1e-6);
  EXPECT_NEAR(out.at(0, 0, 0, 1), 2.0, 1e-6);
  EXPECT_NEAR(out.at(0, 1, 0, 0), 1.0, 1e-6);
  EXPECT_NEAR(out.at(0, 1, 0, 1), 1.0, 1e-6);
}

TEST(SelfAttention, PermutationEquivariantOverTokens) {
  Rng rng(2);
  const AttentionWeights w = random_weights(rng, 4);
  const Tensor h = rng.normal_tensor({1, 4, 1, 6});
  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  Tensor hp(h.shape());
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 6; ++i) hp.at(0, c, 0, i) = h.at(0, c, 0, perm[i]);
  const Tensor out = self_attention(h, w), outp = self_attention(hp, w);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(outp.at(0, c, 0, i), out.at(0, c, 0, perm[i]), 1e-5);
}

TEST(SelfAttention, RejectsBadShapes) {
  const AttentionWeights w = AttentionWeights::identity(3);
  EXPECT_THROW(self_attention(Tensor({1, 4, 2, 2}), w), std::invalid_argument);
  EXPECT_THROW(self_attention(Tensor({2, 3, 2, 2}), w), std::invalid_argument);
  EXPECT_THROW(self_attention(Tensor({3, 2, 2}), w), std::invalid_argument);
  AttentionWeights bad = w;
  bad.w_k = Tensor({3, 2});
  EXPECT_THROW(self_attention(Tensor({1, 3, 2, 2}), bad), std::invalid_argument);
}

TEST(PatchGrid, NineWindowLayout) {
  const PatchGrid g(128, 128, 64, 64, 32, 32);
  EXPECT_EQ(g.patch_count(), 9u);
  EXPECT_EQ(g.rows(), 3u);
  EXPECT_EQ(g.cols(), 3u);
  EXPECT_EQ(g.positions()[0].top, 0u);
  EXPECT_EQ(g.positions()[1].left, 32u);
  EXPECT_EQ(g.positions()[3].top, 32u);
  EXPECT_EQ(g.positions()[8].top, 64u);
  EXPECT_EQ(g.positions()[8].left, 64u);
}

TEST(PatchGrid, CountFormulaAndHorizontalOverlap) {
  for (auto [H, W, h, w, dh, dw] : {std::tuple{16, 24, 8, 8, 4, 4}, std::tuple{12, 12, 12, 12, 1, 1},
                                    std::tuple{20, 10, 4, 5, 8, 5}, std::tuple{9, 9, 3, 3, 3, 3}}) {
    const PatchGrid g(H, W, h, w, dh, dw);
    EXPECT_EQ(g.patch_count(), std::size_t(((H - h) / dh + 1) * ((W - w) / dw + 1)));
    // Horizontally adjacent windows share (w - d_w) * h pixels when d_w < w.
    if (g.cols() > 1 && dw < w) {
      const auto a = g.positions()[0], b = g.positions()[1];
      std::size_t shared = 0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const bool in_a = y >= int(a.top) && y < int(a.top) + h && x >= int(a.left) && x < int(a.left) + w;
          const bool in_b = y >= int(b.top) && y < int(b.top) + h && x >= int(b.left) && x < int(b.left) + w;
          shared += in_a && in_b;
        }
      EXPECT_EQ(shared, std::size_t((w - dw) * h));
    }
  }
  EXPECT_EQ(PatchGrid::half_overlap(16, 16, 8, 8).patch_count(), 9u);
}

TEST(PatchGrid, RejectsInexactTiling) {
  EXPECT_THROW(PatchGrid(10, 10, 4, 4, 4, 4), std::invalid_argument);
  EXPECT_THROW(PatchGrid(8, 8, 9, 4, 1, 1), std::invalid_argument);
  EXPECT_THROW(PatchGrid(8, 8, 4, 4, 0, 1), std::invalid_argument);
  EXPECT_THROW(PatchGrid(8, 8, 0, 4, 1, 1), std::invalid_argument);
}

TEST(ShiftedCrop, PatchesCopyWindows) {
  Rng rng(3);
  const Tensor h = rng.normal_tensor({1, 2, 6, 8});
  const PatchGrid g(6, 8, 4, 4, 2, 2);
  const auto patches = shifted_crop_sampling(h, g);
  ASSERT_EQ(patches.size(), g.patch_count());
  for (std::size_t n = 0; n < patches.size(); ++n) {
    const auto pos = g.positions()[n];
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) ASSERT_EQ(patches[n].at(0, c, y, x), h.at(0, c, pos.top + y, pos.left + x));
  }
  EXPECT_THROW(shifted_crop_sampling(Tensor({1, 2, 6, 6}), g), std::invalid_argument);
}

TEST(ReconstructAverage, RoundTripIsExact) {
  Rng rng(4);
  for (auto [H, W, h, w, dh, dw] : {std::tuple{128, 128, 64, 64, 32, 32}, std::tuple{16, 12, 8, 4, 4, 2},
                                    std::tuple{9, 9, 3, 3, 1, 1}, std::tuple{8, 8, 8, 8, 1, 1}}) {
    const PatchGrid g(H, W, h, w, dh, dw);
    const Tensor x = rng.normal_tensor({1, 3, std::size_t(H), std::size_t(W)});
    EXPECT_LE(max_abs_diff(reconstruct_average(shifted_crop_sampling(x, g), g), x), 1e-6);
  }
}

TEST(ReconstructAverage, TwoPatchesAverageInOverlap) {
  const PatchGrid g(6, 4, 4, 4, 2, 2);  // rows 0-3 and 2-5; overlap rows 2-3
  ASSERT_EQ(g.patch_count(), 2u);
  const std::vector<Tensor> patches = {Tensor({1, 1, 4, 4}, 1.0f), Tensor({1, 1, 4, 4}, 3.0f)};
  const Tensor out = reconstruct_average(patches, g);
  for (std::size_t x = 0; x < 4; ++x) {
    EXPECT_FLOAT_EQ(out.at(0, 0, 0, x), 1.0f);
    EXPECT_FLOAT_EQ(out.at(0, 0, 1, x), 1.0f);
    EXPECT_FLOAT_EQ(out.at(0, 0, 2, x), 2.0f);
    EXPECT_FLOAT_EQ(out.at(0, 0, 3, x), 2.0f);
    EXPECT_FLOAT_EQ(out.at(0, 0, 5, x), 3.0f);
  }
  EXPECT_THROW(reconstruct_average({patches[0]}, g), std::invalid_argument);
}

TEST(ScaleFusion, EqualInputsReturnInput) {
  Rng rng(5);
  const Tensor x = rng.normal_tensor({1, 4, 16, 16});
  for (BlurSpec blur : {BlurSpec{BlurMode::gaussian, 1.0, 0.25}, BlurSpec{BlurMode::ideal_lowpass, 1.0, 0.25}}) {
    EXPECT_LE(max_abs_diff(scale_fusion(x, x, blur), x), 1e-5);
  }
}

TEST(ScaleFusion, ConstantInputsTakeLocalValue) {
  const Tensor a({1, 2, 8, 8}, 5.0f), b({1, 2, 8, 8}, -1.5f);
  const Tensor out = scale_fusion(a, b, BlurSpec{BlurMode::gaussian, 1.0, 0.25});
  for (float v : out.data()) EXPECT_NEAR(v, -1.5, 1e-5);
}

TEST(ScaleFusion, IdealLowpassSplitsSpectrum) {
  Rng rng(6);
  const BlurSpec blur{BlurMode::ideal_lowpass, 1.0, 0.25};
  const Tensor g = rng.normal_tensor({1, 2, 16, 16}), l = rng.normal_tensor({1, 2, 16, 16});
  const Tensor out = scale_fusion(g, l, blur);
  // Low band of the output is the low band of l, high band is the high band of g.
  EXPECT_LE(max_abs_diff(lowpass(out, blur), lowpass(l, blur)), 1e-5);
  EXPECT_LE(max_abs_diff(out - lowpass(out, blur), g - lowpass(g, blur)), 1e-5);
}

TEST(ScaleFusion, ShapeMismatchThrows) {
  EXPECT_THROW(scale_fusion(Tensor({1, 2, 4, 4}), Tensor({1, 2, 4, 5}), BlurSpec{}), std::invalid_argument);
}

TEST(FusedAttention, SingleWindowIsPlainAttention) {
  Rng rng(7);
  const AttentionWeights w = random_weights(rng, 4);
  const Tensor h = rng.normal_tensor({1, 4, 6, 6});
  const PatchGrid g(6, 6, 6, 6, 1, 1);
  EXPECT_LE(max_abs_diff(fused_attention(h, w, g, BlurSpec{}), self_attention(h, w)), 1e-5);
}

TEST(FusedAttention, MatchesIndependentComposition) {
  Rng rng(8);
  const AttentionWeights w = random_weights(rng, 8);
  const Tensor h = rng.normal_tensor({1, 8, 16, 16});
  const PatchGrid g(16, 16, 12, 12, 4, 4);
  const BlurSpec blur{BlurMode::gaussian, 1.0, 0.25};

  // Independent composition: explicit windows, explicit averaging, reference blur.
  const Tensor global = self_attention(h, w);
  std::vector<double> sum(h.size(), 0.0), count(16 * 16, 0.0);
  for (const auto& pos : g.positions()) {
    Tensor crop({1, 8, 12, 12});
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t y = 0; y < 12; ++y)
        for (std::size_t x = 0; x < 12; ++x) crop.at(0, c, y, x) = h.at(0, c, pos.top + y, pos.left + x);
    const Tensor att = self_attention(crop, w);
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t y = 0; y < 12; ++y)
        for (std::size_t x = 0; x < 12; ++x) sum[(c * 16 + pos.top + y) * 16 + pos.left + x] += att.at(0, c, y, x);
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 12; ++x) count[(pos.top + y) * 16 + pos.left + x] += 1.0;
  }
  Tensor local(h.shape());
  for (std::size_t i = 0; i < local.size(); ++i) local[i] = static_cast<float>(sum[i] / count[i % 256]);
  const Tensor expected = (global - oracle::reference_gaussian_blur(global, 1.0)) +
                          oracle::reference_gaussian_blur(local, 1.0);
  EXPECT_LE(max_abs_diff(fused_attention(h, w, g, blur), expected), 1e-5);
}
