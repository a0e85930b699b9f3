// Copyright 2026 The gadft Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gadft {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

std::string shape_string(const Shape& shape);
Index shape_numel(const Shape& shape);

template <typename T>
class BasicTensor;

namespace detail {

template <typename T>
struct Node;

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;
};

/// Backward callback: receives the gradient of the node output and one
/// accumulation buffer per input (nullptr where the input needs no gradient).
/// Implementations add into the buffers.
template <typename T>
using BackwardFn = std::function<void(std::span<const T>, std::span<std::vector<T>* const>)>;

template <typename T>
struct Node {
  std::uint64_t sequence = 0;
  std::vector<BasicTensor<T>> inputs;
  BackwardFn<T> backward;
};

}  // namespace detail

/// Dense row-major n-dimensional array with an optional gradient buffer.
///
/// A tensor is a handle: copies share the underlying buffer, which is what
/// lets the optimizer and the backward pass address the same parameters.
/// Use clone() for an independent deep copy.
template <typename T>
class BasicTensor {
 public:
  using Scalar = T;

  BasicTensor();
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor scalar(T value);

  const Shape& shape() const { return storage_->shape; }
  Index rank() const { return static_cast<Index>(storage_->shape.size()); }
  Index dim(Index axis) const;
  Index numel() const { return static_cast<Index>(storage_->data.size()); }
  bool empty() const { return storage_->data.empty(); }

  std::span<const T> data() const { return storage_->data; }
  std::span<T> mutable_data() { return storage_->data; }
  const T* raw() const { return storage_->data.data(); }
  T item() const;

  bool requires_grad() const { return storage_->requires_grad; }
  /// Only leaves may be marked; results inherit the flag from their inputs.
  void set_requires_grad(bool flag);
  bool is_leaf() const { return storage_->node == nullptr; }
  bool has_grad() const { return !storage_->grad.empty(); }
  /// Gradient buffer; empty until a backward pass reaches this leaf.
  std::span<const T> grad() const { return storage_->grad; }
  std::span<T> mutable_grad() { return storage_->grad; }
  void zero_grad();

  /// Deep copy of data only: no gradient, no graph, not requiring grad.
  BasicTensor clone() const;
  /// Copy of data and shape under a new shape with the same element count.
  BasicTensor reshaped(Shape shape) const;

  bool same_storage(const BasicTensor& other) const { return storage_ == other.storage_; }

 private:
  explicit BasicTensor(std::shared_ptr<detail::TensorStorage<T>> storage)
      : storage_(std::move(storage)) {}

  std::shared_ptr<detail::TensorStorage<T>> storage_;

  template <typename U>
  friend BasicTensor<U> make_result(Shape, std::vector<U>, std::vector<BasicTensor<U>>,
                                    detail::BackwardFn<U>);
  template <typename U>
  friend void backward(const BasicTensor<U>&);
};

using Tensor = BasicTensor<float>;

/// Graph recording is on by default; this guard disables it for a scope on
/// the current thread.
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

/// Builds an op result. A graph node is recorded when recording is enabled
/// and at least one input requires a gradient.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::vector<BasicTensor<T>> inputs,
                           detail::BackwardFn<T> backward_fn);

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
/// calls; callers zero them explicitly. Nodes are visited in exact reverse
/// order of their creation.
template <typename T>
void backward(const BasicTensor<T>& root);

/// Rows [begin, begin + count) of the leading axis, as a detached copy.
template <typename T>
BasicTensor<T> slice_batch(const BasicTensor<T>& x, Index begin, Index count);

/// Gathers leading-axis entries by index, as a detached copy.
template <typename T>
BasicTensor<T> gather_batch(const BasicTensor<T>& x, std::span<const Index> indices);

/// Stacks equally shaped tensors along a new leading axis.
template <typename T>
BasicTensor<T> stack(std::span<const BasicTensor<T>> items);

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& x) {
  std::vector<To> out(x.data().begin(), x.data().end());
  return BasicTensor<To>(x.shape(), std::move(out));
}

}  // namespace gadft
