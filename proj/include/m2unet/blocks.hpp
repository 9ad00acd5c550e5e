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
#include <string>

#include "m2unet/ops.hpp"
#include "m2unet/params.hpp"
#include "m2unet/tensor.hpp"

// MetaFormer building blocks and the multi-scale upsampling cross-link.
namespace m2unet::blocks {

template <typename T>
struct NormParams {
  Tensor<T> gamma;  // [C]
  Tensor<T> beta;   // [C]
};

// Channel MLP weights, applied as x + σ(Norm(x)·w1)·w2.
template <typename T>
struct MlpParams {
  NormParams<T> norm;
  Tensor<T> w1;  // [C, e·C]
  Tensor<T> w2;  // [e·C, C]
};

// Pointwise -> depthwise -> pointwise token mixer plus channel MLP.
template <typename T>
struct ConvFormerParams {
  NormParams<T> norm1;
  Tensor<T> pw1;  // [C, r·C]
  Tensor<T> dw;   // [k, k, 1, r·C]
  Tensor<T> pw2;  // [r·C, C]
  MlpParams<T> mlp;

  std::size_t channels() const { return pw1.dim(0); }
};

template <typename T>
struct TransformerParams {
  NormParams<T> norm1;
  Tensor<T> wq, wk, wv, wo;  // [C, C] each
  std::size_t heads = 1;
  MlpParams<T> mlp;

  std::size_t channels() const { return wq.dim(0); }
};

// Parallel 3×3 and 7×7 convolutions over a ×scale nearest upsample.
template <typename T>
struct MUParams {
  Tensor<T> conv3_w;  // [3, 3, C_in, C_out]
  Tensor<T> conv3_b;  // [C_out]
  Tensor<T> conv7_w;  // [7, 7, C_in, C_out]
  Tensor<T> conv7_b;  // [C_out]
  std::size_t scale = 4;
};

// Nonlinearities used inside the blocks. Mixer and MLP use GELU; the MU merge
// gate uses ReLU unless switched.
struct BlockActivations {
  ops::Activation mixer = ops::Activation::kGelu;
  ops::Activation mlp = ops::Activation::kGelu;
  ops::Activation merge = ops::Activation::kRelu;
};

// Registers freshly initialized parameters under `prefix` and returns views.
template <typename T>
ConvFormerParams<T> init_conv_former(ParamStore<T>& store, const std::string& prefix,
                                     std::size_t channels, std::size_t mixer_ratio,
                                     std::size_t mlp_ratio, std::size_t dw_kernel,
                                     std::uint64_t seed);
template <typename T>
TransformerParams<T> init_transformer(ParamStore<T>& store, const std::string& prefix,
                                      std::size_t channels, std::size_t heads,
                                      std::size_t mlp_ratio, std::uint64_t seed);
template <typename T>
MUParams<T> init_mu(ParamStore<T>& store, const std::string& prefix, std::size_t in_channels,
                    std::size_t out_channels, std::uint64_t seed);

// Looks up previously registered parameters.
template <typename T>
ConvFormerParams<T> conv_former_params(const ParamStore<T>& store, const std::string& prefix);
template <typename T>
TransformerParams<T> transformer_params(const ParamStore<T>& store, const std::string& prefix,
                                        std::size_t heads);
template <typename T>
MUParams<T> mu_params(const ParamStore<T>& store, const std::string& prefix);

template <typename T>
Tensor<T> channel_mlp(const Tensor<T>& x, const MlpParams<T>& p,
                      ops::Activation act = ops::Activation::kGelu);

template <typename T>
Tensor<T> conv_former_block(const Tensor<T>& x, const ConvFormerParams<T>& p,
                            const BlockActivations& acts = {});

// Multi-head scaled dot-product attention over the H·W tokens of each image.
// No positional embedding; scale is 1/sqrt(C/heads).
template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const TransformerParams<T>& p);

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const TransformerParams<T>& p,
                            const BlockActivations& acts = {});

// σ(x_shallow + conv3(up(x_deep)) + conv7(up(x_deep))).
template <typename T>
Tensor<T> mu_block(const Tensor<T>& x_deep, const Tensor<T>& x_shallow, const MUParams<T>& p,
                   ops::Activation merge = ops::Activation::kRelu);

}  // namespace m2unet::blocks
