/* Copyright 2026 The M2UNet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "m2unet/error.hpp"
#include "m2unet/gradcheck.hpp"
#include "m2unet/ops.hpp"
#include "test_util.hpp"

namespace m2unet {
namespace {

using ops::ConvSpec;
using testing::random_tensor;

// Direct cross-correlation oracle: output pixel by pixel, explicit indices,
// accumulation in double.
Tensor<double> brute_force_conv(const Tensor<double>& x, const Tensor<double>& w,
                                const Tensor<double>& bias, std::size_t stride, std::size_t pad_top,
                                std::size_t pad_left, std::size_t oh, std::size_t ow,
                                std::size_t groups) {
  const std::size_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), cin = x.dim(3);
  const std::size_t kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  const std::size_t cin_g = cin / groups, cout_g = cout / groups;
  std::vector<double> out;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t co = 0; co < cout; ++co) {
          const std::size_t g = co / cout_g;
          double acc = bias.defined() ? bias.at({co}) : 0.0;
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx)
              for (std::size_t ci = 0; ci < cin_g; ++ci) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad_top);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad_left);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd))
                  continue;
                acc += x.at({b, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix),
                             g * cin_g + ci}) *
                       w.at({ky, kx, ci, co});
              }
          out.push_back(acc);
        }
  return Tensor<double>({n, oh, ow, cout}, out);
}

TEST(MatmulTest, HandExamples) {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  Tensor<double> m({2, 2}, {1, 2, 3, 4});
  EXPECT_TRUE(testing::bitwise_equal(ops::matmul(eye, m), m));
  auto r = ops::matmul(m, Tensor<double>({2, 1}, {5, 6}));
  EXPECT_EQ(r.shape(), (Shape{2, 1}));
  EXPECT_EQ(r.at({0, 0}), 17.0);
  EXPECT_EQ(r.at({1, 0}), 39.0);
  Rng rng(3);
  auto z = ops::matmul(Tensor<double>::zeros({2, 2}), random_tensor<double>(rng, {2, 5}));
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(MatmulTest, ShapeMismatchNamesBothShapes) {
  try {
    ops::matmul(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({4, 5}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[4, 5]"), std::string::npos);
  }
}

TEST(Conv2dTest, IdentityKernel) {
  Rng rng(4);
  auto x = random_tensor<float>(rng, {2, 5, 6, 1});
  auto y = ops::conv2d(x, Tensor<float>({1, 1, 1, 1}, {1.0f}), {}, ConvSpec::same(1));
  EXPECT_TRUE(testing::bitwise_equal(x, y));
}

TEST(Conv2dTest, AllOnesSamePadding) {
  auto x = Tensor<double>::full({1, 3, 3, 1}, 1.0);
  auto y = ops::conv2d(x, Tensor<double>::full({3, 3, 1, 1}, 1.0), {}, ConvSpec::same(3));
  EXPECT_EQ(y.at({0, 1, 1, 0}), 9.0);
  EXPECT_EQ(y.at({0, 0, 0, 0}), 4.0);
  EXPECT_EQ(y.at({0, 2, 2, 0}), 4.0);
  EXPECT_EQ(y.at({0, 0, 1, 0}), 6.0);
}

TEST(Conv2dTest, DepthwiseScalesEachChannel) {
  Tensor<double> x({1, 1, 1, 2}, {3.0, -2.0});
  Tensor<double> w({1, 1, 1, 2}, {0.5, 4.0});
  ConvSpec spec = ConvSpec::same(1, 2);
  auto y = ops::conv2d(x, w, {}, spec);
  EXPECT_EQ(y.at({0, 0, 0, 0}), 1.5);
  EXPECT_EQ(y.at({0, 0, 0, 1}), -8.0);
}

TEST(Conv2dTest, ExplicitPaddingOutputSize) {
  for (std::size_t h : {7u, 8u, 11u, 16u}) {
    for (std::size_t stride : {1u, 2u, 4u}) {
      for (std::size_t pad : {0u, 1u, 2u, 3u}) {
        auto g = ops::conv_geometry(h, 7, ConvSpec::explicit_pad(7, stride, pad));
        EXPECT_EQ(g.out, (h + 2 * pad - 7) / stride + 1);
      }
    }
  }
  EXPECT_EQ(ops::conv_geometry(352, 7, ConvSpec::explicit_pad(7, 4, 2)).out, 88u);
  EXPECT_EQ(ops::conv_geometry(88, 3, ConvSpec::explicit_pad(3, 2, 1)).out, 44u);
  EXPECT_THROW(ops::conv_geometry(2, 7, ConvSpec::explicit_pad(7, 1, 1)), DimensionError);
}

TEST(Conv2dTest, SamePaddingWithStrideUsesCeil) {
  ConvSpec spec = ConvSpec::same(3);
  spec.stride = 2;
  EXPECT_EQ(ops::conv_geometry(7, 3, spec).out, 4u);
  EXPECT_EQ(ops::conv_geometry(8, 3, spec).out, 4u);
}

TEST(Conv2dTest, ChannelGroupMismatchIsDimensionError) {
  auto x = Tensor<float>::zeros({1, 4, 4, 3});
  EXPECT_THROW(ops::conv2d(x, Tensor<float>::zeros({3, 3, 1, 3}), {}, ConvSpec::same(3, 2)),
               DimensionError);
  EXPECT_THROW(ops::conv2d(x, Tensor<float>::zeros({3, 3, 2, 3}), {}, ConvSpec::same(3)),
               DimensionError);
  EXPECT_THROW(ops::conv2d(x, Tensor<float>::zeros({3, 3, 3, 4}), Tensor<float>::zeros({3}),
                           ConvSpec::same(3)),
               DimensionError);
}

TEST(Conv2dTest, MatchesBruteForce) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t groups = 1 + rng.below(3);
    const std::size_t cin = groups * (1 + rng.below(2));
    const std::size_t cout = groups * (1 + rng.below(3));
    const std::size_t k = 1 + rng.below(4);
    const std::size_t stride = 1 + rng.below(3);
    const std::size_t h = k + rng.below(5), w = k + rng.below(5);
    auto x = random_tensor<double>(rng, {1 + rng.below(2), h, w, cin});
    auto wt = random_tensor<double>(rng, {k, k, cin / groups, cout});
    auto b = random_tensor<double>(rng, {cout});
    ConvSpec spec;
    spec.kernel_h = spec.kernel_w = k;
    spec.stride = stride;
    spec.groups = groups;
    if (trial % 2) {
      spec.padding = ConvSpec::Padding::kExplicit;
      spec.pad = rng.below(3);
    }
    auto gh = ops::conv_geometry(h, k, spec);
    auto gw = ops::conv_geometry(w, k, spec);
    auto expected = brute_force_conv(x, wt, b, stride, gh.pad_before, gw.pad_before, gh.out, gw.out,
                                     groups);
    auto got = ops::conv2d(x, wt, b, spec);
    ASSERT_EQ(got.shape(), expected.shape());
    EXPECT_LT(testing::max_abs_diff(got, expected), 1e-12) << "trial " << trial;
  }
}

TEST(Conv2dTest, DepthwiseEqualsPerChannelConv) {
  Rng rng(12);
  for (std::size_t c = 1; c <= 3; ++c) {
    auto x = random_tensor<double>(rng, {2, 5, 4, c});
    auto w = random_tensor<double>(rng, {3, 3, 1, c});
    auto y = ops::conv2d(x, w, {}, ConvSpec::same(3, c));
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::vector<double> xs, ws;
      for (std::size_t i = 0; i < x.numel() / c; ++i) xs.push_back(x.values()[i * c + ch]);
      for (std::size_t i = 0; i < 9; ++i) ws.push_back(w.values()[i * c + ch]);
      auto yc = ops::conv2d(Tensor<double>({2, 5, 4, 1}, xs), Tensor<double>({3, 3, 1, 1}, ws), {},
                            ConvSpec::same(3));
      for (std::size_t i = 0; i < yc.numel(); ++i) {
        EXPECT_NEAR(y.values()[i * c + ch], yc.values()[i], 1e-14);
      }
    }
  }
}

TEST(Conv2dTest, PointwiseEqualsMatmul) {
  Rng rng(13);
  auto x = random_tensor<double>(rng, {2, 3, 3, 4});
  auto w = random_tensor<double>(rng, {1, 1, 4, 5});
  auto a = ops::conv2d(x, w, {}, ConvSpec::same(1));
  auto b = ops::matmul(ops::reshape(x, {18, 4}), ops::reshape(w, {4, 5}));
  EXPECT_LT(testing::max_abs_diff(ops::reshape(a, {18, 5}), b), 1e-14);
}

TEST(TransposeConvTest, SingleScatter) {
  Tensor<double> x({1, 1, 1, 1}, {2.0});
  Tensor<double> k({2, 2, 1, 1}, {1, 2, 3, 4});
  auto y = ops::transpose_conv2d(x, k, {}, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 1}));
  EXPECT_EQ(y.at({0, 0, 0, 0}), 2.0);
  EXPECT_EQ(y.at({0, 0, 1, 0}), 4.0);
  EXPECT_EQ(y.at({0, 1, 0, 0}), 6.0);
  EXPECT_EQ(y.at({0, 1, 1, 0}), 8.0);
}

TEST(TransposeConvTest, ZeroInputGivesZeroOutput) {
  Rng rng(5);
  auto y = ops::transpose_conv2d(Tensor<float>::zeros({1, 3, 2, 2}),
                                 random_tensor<float>(rng, {4, 4, 2, 3}), {}, 4);
  EXPECT_EQ(y.shape(), (Shape{1, 12, 8, 3}));
  for (float v : y.values()) EXPECT_EQ(v, 0.0f);
}

TEST(TransposeConvTest, DisjointTilesMatchBruteForce) {
  Rng rng(6);
  auto x = random_tensor<double>(rng, {2, 2, 3, 3});
  auto w = random_tensor<double>(rng, {2, 2, 3, 2});
  auto b = random_tensor<double>(rng, {2});
  auto y = ops::transpose_conv2d(x, w, b, 2);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 6, 2}));
  // Brute force: scatter every input pixel, accumulate into a zero canvas.
  std::vector<double> canvas(y.numel(), 0.0);
  auto at = [&](std::size_t n, std::size_t i, std::size_t j, std::size_t c) -> double& {
    return canvas[((n * 4 + i) * 6 + j) * 2 + c];
  };
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 6; ++j)
        for (std::size_t c = 0; c < 2; ++c) at(n, i, j, c) = b.at({c});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t bb = 0; bb < 2; ++bb)
            for (std::size_t ci = 0; ci < 3; ++ci)
              for (std::size_t co = 0; co < 2; ++co)
                at(n, 2 * i + a, 2 * j + bb, co) += x.at({n, i, j, ci}) * w.at({a, bb, ci, co});
  EXPECT_LT(testing::max_abs_diff(y, Tensor<double>(y.shape(), canvas)), 1e-14);
}

TEST(TransposeConvTest, UnsupportedStrideIsConfigError) {
  EXPECT_THROW(ops::transpose_conv2d(Tensor<float>::zeros({1, 2, 2, 1}),
                                     Tensor<float>::zeros({3, 3, 1, 1}), {}, 3),
               ConfigError);
  EXPECT_THROW(ops::transpose_conv2d(Tensor<float>::zeros({1, 2, 2, 1}),
                                     Tensor<float>::zeros({3, 3, 1, 1}), {}, 2),
               DimensionError);
}

TEST(UpsampleTest, NearestReplication) {
  Tensor<float> x({1, 2, 2, 1}, {1, 2, 3, 4});
  auto y = ops::upsample_nearest(x, 2);
  std::vector<float> expected{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(std::vector<float>(y.values().begin(), y.values().end()), expected);
  EXPECT_TRUE(testing::bitwise_equal(ops::upsample_nearest(x, 1), x));
}

TEST(UpsampleTest, ScaleFourReplicatesSixteenTimes) {
  Rng rng(8);
  auto x = random_tensor<double>(rng, {2, 3, 2, 3});
  auto y = ops::upsample_nearest(x, 4);
  EXPECT_NEAR(ops::sum(y).item(), 16.0 * ops::sum(x).item(), 1e-12);
  for (double v : x.values()) {
    EXPECT_EQ(std::count(y.values().begin(), y.values().end(), v), 16);
  }
}

TEST(UpsampleTest, SubsamplingRecoversInput) {
  Rng rng(9);
  for (std::size_t scale : {1u, 2u, 3u, 4u}) {
    auto x = random_tensor<float>(rng, {2, 3, 4, 2});
    auto y = ops::upsample_nearest(x, scale);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j)
          for (std::size_t c = 0; c < 2; ++c)
            EXPECT_EQ(y.at({n, i * scale, j * scale, c}), x.at({n, i, j, c}));
  }
}

TEST(LayerNormTest, HandExamples) {
  auto ones = Tensor<double>::full({2}, 1.0);
  auto zeros = Tensor<double>::zeros({2});
  auto constant = ops::layer_norm(Tensor<double>({1, 2}, {5, 5}), ones, zeros);
  for (double v : constant.values()) EXPECT_EQ(v, 0.0);

  Rng rng(10);
  auto x = random_tensor<double>(rng, {3, 4});
  auto collapsed = ops::layer_norm(x, Tensor<double>::zeros({4}), Tensor<double>::full({4}, 2.5));
  for (double v : collapsed.values()) EXPECT_EQ(v, 2.5);

  auto pair = ops::layer_norm(Tensor<double>({2}, {1, 3}), ones, zeros, 1e-300);
  EXPECT_NEAR(pair.values()[0], -1.0, 1e-12);
  EXPECT_NEAR(pair.values()[1], 1.0, 1e-12);
}

TEST(LayerNormTest, NormalizesEachPosition) {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 2 + rng.below(8);
    auto x = random_tensor<float>(rng, {3, 5, c}, -4, 4);
    auto y = ops::layer_norm(x, Tensor<float>::full({c}, 1.0f), Tensor<float>::zeros({c}));
    for (std::size_t r = 0; r < 15; ++r) {
      double mu = 0, var = 0;
      for (std::size_t k = 0; k < c; ++k) mu += y.values()[r * c + k];
      mu /= c;
      for (std::size_t k = 0; k < c; ++k) var += std::pow(y.values()[r * c + k] - mu, 2);
      var /= c;
      EXPECT_LT(std::abs(mu), 1e-5);
      EXPECT_NEAR(var, 1.0, 1e-3);
    }
  }
}

TEST(SoftmaxTest, HandExamples) {
  auto u = ops::softmax(Tensor<double>({3}, {0, 0, 0}));
  for (double v : u.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(ops::softmax(Tensor<double>({1}, {42.0})).item(), 1.0);
  auto p = ops::softmax(Tensor<double>({2}, {0.0, std::log(2.0)}));
  EXPECT_NEAR(p.values()[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p.values()[1], 2.0 / 3.0, 1e-15);
}

TEST(SoftmaxTest, RowsSumToOne) {
  Rng rng(15);
  auto x = random_tensor<float>(rng, {4, 7, 9}, -30, 30);
  auto y = ops::softmax(x);
  for (std::size_t r = 0; r < 28; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 9; ++k) {
      const float v = y.values()[r * 9 + k];
      EXPECT_GT(v, 0.0f);
      EXPECT_LE(v, 1.0f);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(ActivationTest, Definitions) {
  auto r = ops::relu(Tensor<double>({3}, {-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(r.values().begin(), r.values().end()),
            (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(ops::sigmoid(Tensor<double>::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(ops::gelu(Tensor<double>::scalar(0.0)).item(), 0.0);
  // tanh approximation at 1: 0.5·(1 + tanh(sqrt(2/π)·1.044715))
  const double expected = 0.5 * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * 1.044715));
  EXPECT_DOUBLE_EQ(ops::gelu(Tensor<double>::scalar(1.0)).item(), expected);
  EXPECT_NEAR(expected, 0.8411919906, 1e-9);
  EXPECT_THROW(ops::parse_activation("swish"), ConfigError);
  EXPECT_EQ(ops::parse_activation("gelu"), ops::Activation::kGelu);
}

TEST(ActivationTest, SigmoidStaysFiniteForLargeInputs) {
  auto y = ops::sigmoid(Tensor<float>({2}, {-200.0f, 200.0f}));
  EXPECT_GE(y.values()[0], 0.0f);
  EXPECT_EQ(y.values()[1], 1.0f);
}

// ---------------------------------------------------------------------------
// Finite-difference checks, f64, 20 seeds per op.

struct OpCase {
  const char* name;
  std::function<Tensor<double>(Rng&, std::vector<Tensor<double>>&)> build;
};

// Scalar root: weighted sum with fixed random weights so every output element
// contributes a distinct sensitivity.
Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  auto w = random_tensor<double>(rng, y.shape());
  return ops::sum(ops::mul(y, w));
}

void run_gradcheck(const OpCase& c) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(mix_seed(seed, 99));
    std::vector<Tensor<double>> leaves;
    auto fn = c.build(rng, leaves);  // first call creates leaves
    std::vector<std::string> names;
    for (std::size_t i = 0; i < leaves.size(); ++i) names.push_back("in" + std::to_string(i));
    auto rebuild = [&] {
      Rng replay(mix_seed(seed, 99));
      std::vector<Tensor<double>> scratch = leaves;
      return c.build(replay, scratch);
    };
    auto r = check_gradients(rebuild, leaves, names);
    EXPECT_LT(r.max_rel_error, 1e-4) << c.name << " seed " << seed << ": " << r.worst;
  }
}

// Each builder creates its leaves on first call (empty vector) and reuses them
// on replays, so finite differences see the perturbed values.
template <typename Fn>
OpCase make_case(const char* name, std::vector<Shape> shapes, Fn&& fn) {
  return {name, [shapes, fn](Rng& rng, std::vector<Tensor<double>>& leaves) {
            if (leaves.empty()) {
              for (const auto& s : shapes) leaves.push_back(random_tensor<double>(rng, s, -1, 1, true));
            }
            return weighted_sum(fn(leaves), 1234);
          }};
}

TEST(GradCheckTest, ElementwiseAndShapeOps) {
  run_gradcheck(make_case("add", {{2, 3}, {2, 3}}, [](auto& l) { return ops::add(l[0], l[1]); }));
  run_gradcheck(make_case("sub", {{2, 3}, {2, 3}}, [](auto& l) { return ops::sub(l[0], l[1]); }));
  run_gradcheck(make_case("mul", {{4, 3}, {4, 3}}, [](auto& l) { return ops::mul(l[0], l[1]); }));
  run_gradcheck(make_case("div", {{3, 3}, {3, 3}}, [](auto& l) {
    return ops::div(l[0], ops::add_scalar(ops::mul(l[1], l[1]), 1.0));
  }));
  run_gradcheck(make_case("scale", {{5}}, [](auto& l) { return ops::scale(l[0], -1.7); }));
  run_gradcheck(make_case("add_bias", {{2, 2, 3}, {3}}, [](auto& l) { return ops::add_bias(l[0], l[1]); }));
  run_gradcheck(make_case("mean", {{3, 4}}, [](auto& l) { return ops::mul(ops::mean(l[0]), ops::mean(l[0])); }));
  run_gradcheck(make_case("sum_per_sample", {{3, 2, 2}}, [](auto& l) { return ops::sum_per_sample(l[0]); }));
  run_gradcheck(make_case("reshape", {{2, 6}}, [](auto& l) { return ops::reshape(l[0], {3, 4}); }));
  run_gradcheck(make_case("permute", {{2, 3, 4}}, [](auto& l) { return ops::permute(l[0], {2, 0, 1}); }));
  run_gradcheck(make_case("concat", {{2, 2, 3}, {2, 2, 1}}, [](auto& l) { return ops::concat_channels(l[0], l[1]); }));
}

TEST(GradCheckTest, Products) {
  run_gradcheck(make_case("matmul", {{3, 4}, {4, 2}}, [](auto& l) { return ops::matmul(l[0], l[1]); }));
  run_gradcheck(make_case("bmm", {{2, 3, 4}, {2, 4, 3}}, [](auto& l) { return ops::bmm(l[0], l[1]); }));
}

TEST(GradCheckTest, Convolutions) {
  run_gradcheck(make_case("conv2d_3x3", {{2, 4, 4, 3}, {3, 3, 3, 2}, {2}}, [](auto& l) {
    return ops::conv2d(l[0], l[1], l[2], ConvSpec::same(3));
  }));
  run_gradcheck(make_case("conv2d_strided", {{1, 4, 4, 2}, {3, 3, 2, 4}, {4}}, [](auto& l) {
    return ops::conv2d(l[0], l[1], l[2], ConvSpec::explicit_pad(3, 2, 1));
  }));
  run_gradcheck(make_case("conv2d_depthwise", {{2, 4, 4, 4}, {3, 3, 1, 4}}, [](auto& l) {
    return ops::conv2d(l[0], l[1], Tensor<double>{}, ConvSpec::same(3, 4));
  }));
  run_gradcheck(make_case("conv2d_grouped", {{1, 3, 3, 4}, {2, 2, 2, 4}}, [](auto& l) {
    ConvSpec spec = ConvSpec::same(2, 2);
    return ops::conv2d(l[0], l[1], Tensor<double>{}, spec);
  }));
  run_gradcheck(make_case("transpose_conv2d", {{2, 2, 2, 3}, {2, 2, 3, 2}, {2}}, [](auto& l) {
    return ops::transpose_conv2d(l[0], l[1], l[2], 2);
  }));
  run_gradcheck(make_case("transpose_conv2d_x4", {{1, 1, 2, 2}, {4, 4, 2, 1}}, [](auto& l) {
    return ops::transpose_conv2d(l[0], l[1], Tensor<double>{}, 4);
  }));
  run_gradcheck(make_case("upsample", {{2, 2, 3, 2}}, [](auto& l) { return ops::upsample_nearest(l[0], 2); }));
}

TEST(GradCheckTest, NormsAndActivations) {
  run_gradcheck(make_case("layer_norm", {{2, 3, 4}, {4}, {4}}, [](auto& l) {
    return ops::layer_norm(l[0], l[1], l[2]);
  }));
  run_gradcheck(make_case("softmax", {{3, 4}}, [](auto& l) { return ops::softmax(ops::scale(l[0], 3.0)); }));
  run_gradcheck(make_case("gelu", {{4, 4}}, [](auto& l) { return ops::gelu(ops::scale(l[0], 3.0)); }));
  run_gradcheck(make_case("relu", {{4, 4}}, [](auto& l) { return ops::relu(l[0]); }));
  run_gradcheck(make_case("sigmoid", {{4, 4}}, [](auto& l) { return ops::sigmoid(ops::scale(l[0], 4.0)); }));
}

TEST(GradCheckTest, TensorFeedingTwoConsumersAccumulates) {
  run_gradcheck(make_case("fan_out", {{3, 3}}, [](auto& l) {
    return ops::add(ops::mul(l[0], l[0]), ops::gelu(l[0]));
  }));
}

}  // namespace
}  // namespace m2unet
