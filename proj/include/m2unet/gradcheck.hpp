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
#include <functional>
#include <string>
#include <vector>

#include "m2unet/tensor.hpp"

namespace m2unet {

struct GradCheckOptions {
  double step = 1e-5;
  // Per-leaf cap on probed elements; 0 probes every element.
  std::size_t max_probes_per_leaf = 0;
  // Cap on probed elements across all leaves; 0 disables the cap.
  std::size_t max_total_probes = 0;
  std::uint64_t seed = 0;
  // Denominator floor for the relative error: |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::string worst;  // "<leaf>[<index>] analytic=... numeric=..."
};

// Compares reverse-mode gradients of a scalar function against central finite
// differences. `leaves` must be f64 leaf tensors with requires_grad; `fn`
// rebuilds the root from scratch each call.
GradCheckResult check_gradients(const std::function<Tensor<double>()>& fn,
                                std::vector<Tensor<double>> leaves,
                                const std::vector<std::string>& names,
                                const GradCheckOptions& options = {});

}  // namespace m2unet
