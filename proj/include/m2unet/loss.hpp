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
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "m2unet/tensor.hpp"

namespace m2unet {

inline constexpr double kJaccardAlpha = 0.7;

// α·(1 − (α + Σ y·ŷ) / (α + Σ y + Σ ŷ − Σ y·ŷ)), summed over every element
// (the whole batch, when given one). Differentiable in `yhat`; `y` is treated
// as a constant.
template <typename T>
Tensor<T> jaccard_loss(const Tensor<T>& y, const Tensor<T>& yhat, double alpha = kJaccardAlpha);

// Mean over the batch axis of per-sample jaccard_loss values; y, yhat are
// [N, ...].
template <typename T>
Tensor<T> batch_jaccard_loss(const Tensor<T>& y, const Tensor<T>& yhat,
                             double alpha = kJaccardAlpha);

inline constexpr double kBinarizeThreshold = 0.5;

// 1 where p >= threshold.
template <typename T>
std::vector<std::uint8_t> binarize(std::span<const T> prob, double threshold = kBinarizeThreshold);

// Masks hold 0/1 bytes (any nonzero byte counts as foreground). Both-empty
// pairs score 1.0.
double dice(std::span<const std::uint8_t> y, std::span<const std::uint8_t> yhat);
double iou(std::span<const std::uint8_t> y, std::span<const std::uint8_t> yhat);

template <typename T>
double mae(std::span<const std::uint8_t> y, std::span<const T> prob);

struct SampleMetrics {
  std::string id;
  double dice = 0.0;
  double iou = 0.0;
  double mae = 0.0;
};

struct MetricsReport {
  std::vector<SampleMetrics> per_sample;
  double m_dice = 0.0;
  double m_iou = 0.0;
  double mae = 0.0;

  // Scores one probability map against its mask and refreshes the means.
  template <typename T>
  const SampleMetrics& add(const std::string& id, std::span<const std::uint8_t> y,
                           std::span<const T> prob);

  // Header, one row per sample, then an aggregate row; 4 decimals.
  std::string to_tsv() const;
};

}  // namespace m2unet
