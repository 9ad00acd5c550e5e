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

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "m2unet/blocks.hpp"
#include "m2unet/config.hpp"
#include "m2unet/params.hpp"
#include "m2unet/tensor.hpp"

namespace m2unet {

enum class StageKind { kConv, kAttention };

// How the decoder cross-links are realized.
//   kNone:          no cross-links.
//   kPlainUpsample: nearest ×4 upsample with a 1×1 channel projection.
//   kMu:            full multi-scale upsampling (parallel 3×3 and 7×7 convs).
enum class MuMode { kNone, kPlainUpsample, kMu };

// The ablation rows: baseline, +1/+2 plain upsampling, +1/+2 MU.
enum class Ablation { kBaseline, kPlusOneUpsampling, kPlusOneMu, kPlusTwoUpsampling, kPlusTwoMu };

std::string_view ablation_name(Ablation a);
inline constexpr std::array<Ablation, 5> kAllAblations{
    Ablation::kBaseline, Ablation::kPlusOneUpsampling, Ablation::kPlusOneMu,
    Ablation::kPlusTwoUpsampling, Ablation::kPlusTwoMu};

struct ModelConfig {
  std::size_t image_width = 352;
  std::size_t image_height = 352;
  std::size_t in_channels = 3;
  std::array<std::size_t, 4> filters{64, 128, 320, 512};
  std::array<std::size_t, 4> depths{2, 2, 2, 2};
  std::array<StageKind, 4> kinds{StageKind::kConv, StageKind::kConv, StageKind::kAttention,
                                 StageKind::kAttention};
  // Only read for attention stages.
  std::array<std::size_t, 4> heads{1, 2, 4, 8};
  MuMode mu_mode = MuMode::kMu;
  // 1 enables the deepest link only (s1 -> s3); 2 adds s2 -> s4.
  std::size_t mu_count = 2;
  // Channels of the last two decoder steps and the head input.
  std::size_t head_channels = 64;
  std::size_t mixer_ratio = 2;
  std::size_t mlp_ratio = 4;
  std::size_t dw_kernel = 7;
  blocks::BlockActivations activations{};

  // Throws ConfigError naming the violated invariant.
  void validate() const;

  void write(KeyValueConfig& out) const;
  static ModelConfig read(const KeyValueConfig& in);

  // filters [8,16,24,32], depths 1, head 8 channels, 64×64.
  static ModelConfig tiny();
  // Copies `base` with the cross-link fields of one ablation row.
  static ModelConfig for_ablation(Ablation row, ModelConfig base);
};

// Encoder features x1..x4 at strides 4, 8, 16, 32.
template <typename T>
struct FeaturePyramid {
  std::array<Tensor<T>, 4> levels;
  const Tensor<T>& operator[](std::size_t i) const { return levels[i]; }
};

template <typename T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;
};

// He-uniform conv and projection kernels, zero biases and norm betas, unit
// norm gammas. Every parameter's values depend only on (seed, name).
template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
FeaturePyramid<T> encoder_forward(const Tensor<T>& x, const Model<T>& model);

// Five ×2 transpose-conv steps from W/32 to W. Steps 1-3 fuse the encoder
// skip by concatenation + 3×3 conv; steps 4-5 refine with a 3×3 conv. Cross
// link A feeds step 1 into step 3, link B feeds step 2 into step 4.
template <typename T>
Tensor<T> decoder_forward(const FeaturePyramid<T>& pyramid, const Model<T>& model);

// Full network: N×H×W×3 -> N×H×W×1 probabilities.
template <typename T>
Tensor<T> m2unet_forward(const Tensor<T>& x, const Model<T>& model);

}  // namespace m2unet
