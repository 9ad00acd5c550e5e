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

#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "m2unet/tensor.hpp"

// Differentiable operators. Layout is N×H×W×C (channel-last), row-major.
namespace m2unet::ops {

// Elementwise, identical shapes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

// Scalar ops.
template <typename T> Tensor<T> scale(const Tensor<T>& x, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T s);

// Adds a [C] bias along the last axis.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
// Reduces every axis except the first: [N, ...] -> [N].
template <typename T> Tensor<T> sum_per_sample(const Tensor<T>& x);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
// Concatenates along the last axis; leading extents must match.
template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// [M×K] · [K×N] -> [M×N].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Batched: [B×M×K] · [B×K×N] -> [B×M×N].
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

struct ConvSpec {
  enum class Padding { kSame, kExplicit };

  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  Padding padding = Padding::kSame;
  std::size_t pad = 0;  // used when padding == kExplicit
  std::size_t groups = 1;

  static ConvSpec same(std::size_t k, std::size_t groups = 1) {
    return {k, k, 1, Padding::kSame, 0, groups};
  }
  static ConvSpec explicit_pad(std::size_t k, std::size_t stride, std::size_t pad) {
    return {k, k, stride, Padding::kExplicit, pad, 1};
  }
};

// Output extent and leading padding along one spatial axis.
//   explicit: out = floor((in + 2p - k) / stride) + 1
//   same:     out = ceil(in / stride), total padding split with the extra
//             pixel at the end.
struct ConvGeometry {
  std::size_t out;
  std::size_t pad_before;
};
ConvGeometry conv_geometry(std::size_t in, std::size_t kernel, const ConvSpec& spec);

// Cross-correlation (no kernel flip).
// x: [N,H,W,Cin], w: [kh,kw,Cin/groups,Cout], bias: [Cout] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 const ConvSpec& spec);

// Kernel size equals stride, so every input pixel scatters one disjoint
// stride×stride tile: out[n, i*s+a, j*s+b, :] = bias + Σ_ci x[n,i,j,ci]·w[a,b,ci,:].
// x: [N,H,W,Cin], w: [s,s,Cin,Cout], stride ∈ {2, 4}.
template <typename T>
Tensor<T> transpose_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::size_t stride);

template <typename T> Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t scale);

inline constexpr double kLayerNormEps = 1e-6;

// Normalizes over the last axis: (x - μ) / sqrt(σ² + eps) · gamma + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = kLayerNormEps);

// Along the last axis, with max subtraction.
template <typename T> Tensor<T> softmax(const Tensor<T>& x);

enum class Activation { kGelu, kRelu, kSigmoid };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);

// gelu(x) = 0.5·x·(1 + tanh(sqrt(2/π)·(x + 0.044715·x³))).
template <typename T> Tensor<T> activation(const Tensor<T>& x, Activation kind);
template <typename T> Tensor<T> gelu(const Tensor<T>& x) { return activation(x, Activation::kGelu); }
template <typename T> Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::kRelu); }
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x) {
  return activation(x, Activation::kSigmoid);
}

// Scalar reference of the tanh-approximated GELU.
double gelu_scalar(double x);

}  // namespace m2unet::ops
