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

#include "m2unet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "m2unet/error.hpp"
#include "m2unet/random.hpp"

namespace m2unet {

GradCheckResult check_gradients(const std::function<Tensor<double>()>& fn,
                                std::vector<Tensor<double>> leaves,
                                const std::vector<std::string>& names,
                                const GradCheckOptions& options) {
  if (names.size() != leaves.size()) throw UsageError("check_gradients: one name per leaf");
  for (const auto& leaf : leaves) {
    if (!leaf.is_leaf() || !leaf.requires_grad()) {
      throw UsageError("check_gradients: inputs must be leaves that require grad");
    }
  }
  const Gradients<double> grads = backward(fn());

  // (leaf, element) probe list.
  Rng rng(options.seed);
  std::vector<std::pair<std::size_t, std::size_t>> probes;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    std::vector<std::size_t> idx(leaves[l].numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (options.max_probes_per_leaf && idx.size() > options.max_probes_per_leaf) {
      rng.shuffle(idx);
      idx.resize(options.max_probes_per_leaf);
    }
    for (auto i : idx) probes.emplace_back(l, i);
  }
  if (options.max_total_probes && probes.size() > options.max_total_probes) {
    rng.shuffle(probes);
    probes.resize(options.max_total_probes);
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (auto [l, i] : probes) {
    auto values = leaves[l].mutable_values();
    const double original = values[i];
    values[i] = original + options.step;
    const double up = fn().item();
    values[i] = original - options.step;
    const double down = fn().item();
    values[i] = original;
    const double numeric = (up - down) / (2.0 * options.step);
    const double analytic = grads[leaves[l]].values()[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
    const double rel = std::abs(analytic - numeric) / denom;
    ++result.probes;
    if (rel > result.max_rel_error || result.probes == 1) {
      result.max_rel_error = rel;
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s[%zu] analytic=%.10g numeric=%.10g", names[l].c_str(), i,
                    analytic, numeric);
      result.worst = buf;
    }
  }
  return result;
}

}  // namespace m2unet
