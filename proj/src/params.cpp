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

#include "m2unet/params.hpp"

#include <cmath>

#include "m2unet/error.hpp"
#include "m2unet/random.hpp"

namespace m2unet {

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
const Tensor<T>& ParamStore<T>::add(const std::string& name, Tensor<T> tensor) {
  auto [it, inserted] = tensors_.emplace(name, std::move(tensor));
  if (!inserted) throw UsageError("duplicate parameter name '" + name + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
Tensor<T>& ParamStore<T>::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : tensors_) out.push_back(name);
  return out;
}

template <typename T>
std::size_t ParamStore<T>::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.numel();
  return n;
}

template <typename T>
const Tensor<T>& add_he_uniform(ParamStore<T>& store, const std::string& name, Shape shape,
                                std::size_t fan_in, std::uint64_t seed) {
  if (fan_in == 0) throw UsageError("he_uniform: fan_in must be positive");
  Rng rng(mix_seed(seed, name_hash(name)));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
  return store.add(name, Tensor<T>(std::move(shape), std::move(values), true));
}

template <typename T>
const Tensor<T>& add_constant(ParamStore<T>& store, const std::string& name, Shape shape, T value) {
  return store.add(name, Tensor<T>::full(std::move(shape), value, true));
}

template class ParamStore<float>;
template class ParamStore<double>;
template const Tensor<float>& add_he_uniform(ParamStore<float>&, const std::string&, Shape,
                                             std::size_t, std::uint64_t);
template const Tensor<double>& add_he_uniform(ParamStore<double>&, const std::string&, Shape,
                                              std::size_t, std::uint64_t);
template const Tensor<float>& add_constant(ParamStore<float>&, const std::string&, Shape, float);
template const Tensor<double>& add_constant(ParamStore<double>&, const std::string&, Shape, double);

}  // namespace m2unet
