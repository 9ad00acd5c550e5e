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

#include "m2unet/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <type_traits>

#include "m2unet/error.hpp"

namespace m2unet {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

thread_local bool g_grad_enabled = true;

void validate_shape(const Shape& shape, std::size_t size) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be >= 1, got " + to_string(shape));
  }
  if (numel(shape) != size) {
    throw DimensionError("shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                         " values but " + std::to_string(size) + " were given");
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  validate_shape(shape, values.size());
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = m2unet::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<detail::Node<T>> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw UsageError("access to an undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  }
  return s[axis];
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  if (!node_) throw UsageError("access to an undefined tensor");
  return node_->values;
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
  if (!node_) throw UsageError("access to an undefined tensor");
  if (!node_->inputs.empty()) throw UsageError("only leaf tensors may be modified in place");
  return node_->values;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on a tensor of shape " + to_string(shape()));
  return node_->values[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank does not match " + to_string(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range for " + to_string(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->values[flat];
}

template <typename T>
const std::string& Tensor<T>::op() const {
  if (!node_) throw UsageError("access to an undefined tensor");
  return node_->op;
}

template <typename T>
Tensor<T> Tensor<T>::detach(bool requires_grad) const {
  return Tensor(shape(), node_->values, requires_grad);
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs, detail::BackwardFn<T> backward) {
  validate_shape(shape, values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("op '") + op + "' produced a non-finite value at flat index " +
                         std::to_string(i) + " of output " + to_string(shape));
    }
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> Gradients<T>::operator[](const Tensor<T>& param) const {
  auto it = grads_.find(param.id());
  if (it == grads_.end()) return Tensor<T>::zeros(param.shape());
  return Tensor<T>(param.shape(), it->second);
}

template <typename T>
bool Gradients<T>::contains(const Tensor<T>& param) const {
  return grads_.count(param.id()) != 0;
}

template <typename T>
Gradients<T> backward(const Tensor<T>& root) {
  using NodeT = detail::Node<T>;
  if (!root.defined()) throw UsageError("backward on an undefined tensor");
  if (root.numel() != 1) {
    throw UsageError("backward requires a scalar root, got shape " + to_string(root.shape()));
  }
  Gradients<T> result;
  if (!root.requires_grad()) return result;

  // Iterative post-order DFS; `state` 1 = on stack, 2 = done.
  std::vector<NodeT*> order;
  std::unordered_map<NodeT*, int> state;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  state[root.node().get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (!child->requires_grad) continue;
      auto& s = state[child];
      if (s == 1) throw InternalError("cycle detected in autodiff graph at op '" + child->op + "'");
      if (s == 0) {
        s = 1;
        stack.emplace_back(child, 0);
      }
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<NodeT*, std::vector<T>> grads;
  grads[root.node().get()] = std::vector<T>(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (node->inputs.empty()) {
      result.grads_[node] = std::move(found->second);
      grads.erase(found);
      continue;
    }
    std::vector<T> grad_out = std::move(found->second);
    grads.erase(found);
    std::vector<std::span<T>> grad_in(node->inputs.size());
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      NodeT* in = node->inputs[i].get();
      if (!in->requires_grad) continue;
      auto& g = grads[in];
      if (g.empty()) g.assign(in->values.size(), T(0));
      grad_in[i] = g;
    }
    node->backward(node->values, grad_out, grad_in);
  }
  return result;
}

template <typename T>
void write_tensor_text(std::ostream& out, const Tensor<T>& t) {
  const auto& s = t.shape();
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
  out << '\n';
  char buf[64];
  for (T v : t.values()) {
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    out << buf << '\n';
  }
}

template <typename T>
Tensor<T> read_tensor_text(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("tensor dump: missing shape line");
  Shape shape;
  std::istringstream ss(line);
  std::size_t e;
  while (ss >> e) shape.push_back(e);
  std::vector<T> values;
  values.reserve(numel(shape));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if constexpr (std::is_same_v<T, float>) {
      values.push_back(std::strtof(line.c_str(), nullptr));
    } else {
      values.push_back(static_cast<T>(std::strtod(line.c_str(), nullptr)));
    }
  }
  if (values.size() != numel(shape)) {
    throw FormatError("tensor dump: expected " + std::to_string(numel(shape)) + " values, found " +
                      std::to_string(values.size()));
  }
  return Tensor<T>(std::move(shape), std::move(values));
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t, bool requires_grad) {
  auto v = t.values();
  return Tensor<To>(t.shape(), std::vector<To>(v.begin(), v.end()), requires_grad);
}

#define M2UNET_INSTANTIATE(T)                                                                  \
  template class Tensor<T>;                                                                    \
  template class Gradients<T>;                                                                 \
  template Tensor<T> make_result<T>(const char*, Shape, std::vector<T>, std::vector<Tensor<T>>, \
                                    detail::BackwardFn<T>);                                    \
  template Gradients<T> backward<T>(const Tensor<T>&);                                         \
  template void write_tensor_text<T>(std::ostream&, const Tensor<T>&);                         \
  template Tensor<T> read_tensor_text<T>(std::istream&);

M2UNET_INSTANTIATE(float)
M2UNET_INSTANTIATE(double)
#undef M2UNET_INSTANTIATE

template Tensor<float> cast<float, double>(const Tensor<double>&, bool);
template Tensor<double> cast<double, float>(const Tensor<float>&, bool);
template Tensor<float> cast<float, float>(const Tensor<float>&, bool);
template Tensor<double> cast<double, double>(const Tensor<double>&, bool);

}  // namespace m2unet
