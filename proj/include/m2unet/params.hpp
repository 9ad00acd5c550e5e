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
#include <map>
#include <string>
#include <vector>

#include "m2unet/tensor.hpp"

namespace m2unet {

// Named parameter leaves, ordered by name so iteration is deterministic.
template <typename T>
class ParamStore {
 public:
  // Registers a leaf; names must be unique.
  const Tensor<T>& add(const std::string& name, Tensor<T> tensor);
  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  std::vector<std::string> names() const;
  std::size_t size() const { return tensors_.size(); }
  // Total number of scalar parameters.
  std::size_t count() const;

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, t] : tensors_) out.add(name, m2unet::cast<U>(t, t.requires_grad()));
    return out;
  }

 private:
  std::map<std::string, Tensor<T>> tensors_;
};

// Stable 64-bit hash of a parameter name (FNV-1a).
std::uint64_t name_hash(const std::string& name);

// Each parameter draws from its own stream derived from (seed, name), so
// values do not depend on construction order or on which other parameters
// exist.
template <typename T>
const Tensor<T>& add_he_uniform(ParamStore<T>& store, const std::string& name, Shape shape,
                                std::size_t fan_in, std::uint64_t seed);
template <typename T>
const Tensor<T>& add_constant(ParamStore<T>& store, const std::string& name, Shape shape, T value);

}  // namespace m2unet
