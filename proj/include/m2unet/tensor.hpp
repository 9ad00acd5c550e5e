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
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace m2unet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

// Receives the node's forward output and the gradient of that output, and
// accumulates into the gradients of its inputs. An input that does not require
// grad gets an empty span.
template <typename T>
using BackwardFn = std::function<void(std::span<const T> out, std::span<const T> grad_out,
                                      std::span<const std::span<T>> grad_in)>;

// One record on the tape. Leaves have no inputs and no backward function.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> values;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn<T> backward;
};

}  // namespace detail

// Dense row-major N-d array. A Tensor is a cheap handle; copies share the
// same underlying node. Values are immutable once created except for leaves,
// which the optimizer updates in place through mutable_values().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return values().size(); }

  std::span<const T> values() const;
  std::span<T> mutable_values();
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_ && node_->inputs.empty(); }
  const std::string& op() const;

  // Same values, no tape history, requires_grad as given.
  Tensor detach(bool requires_grad = false) const;

  // Node identity, used as the gradient map key.
  const detail::Node<T>* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node<T>> node);

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

// Disables tape recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds the output of a differentiable op: validates finiteness, and records
// inputs and the backward closure when any input requires grad.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs, detail::BackwardFn<T> backward);

// Gradients of a scalar root with respect to every leaf that requires grad.
template <typename T>
class Gradients {
 public:
  // Zero tensor of the parameter's shape when the root does not depend on it.
  Tensor<T> operator[](const Tensor<T>& param) const;
  bool contains(const Tensor<T>& param) const;
  std::size_t size() const { return grads_.size(); }

 private:
  template <typename U>
  friend Gradients<U> backward(const Tensor<U>& root);
  std::unordered_map<const detail::Node<T>*, std::vector<T>> grads_;
};

template <typename T>
Gradients<T> backward(const Tensor<T>& root);

// Text dump: first line is the space-separated shape, then one value per line
// in row-major order with 9 significant digits.
template <typename T>
void write_tensor_text(std::ostream& out, const Tensor<T>& t);
template <typename T>
Tensor<T> read_tensor_text(std::istream& in);

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t, bool requires_grad = false);

}  // namespace m2unet
