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

#include <cstdint>
#include <string>
#include <vector>

#include "m2unet/random.hpp"
#include "m2unet/tensor.hpp"

namespace m2unet::testing {

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    m = d > m ? d : (-d > m ? -d : m);
  }
  return m;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] != bv[i]) return false;
  }
  return true;
}

}  // namespace m2unet::testing
