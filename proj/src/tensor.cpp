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

#include "gadft/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_map>
#include <unordered_set>

#include "gadft/error.hpp"

namespace gadft {

namespace {

thread_local bool t_grad_enabled = true;
std::atomic<std::uint64_t> g_node_sequence{0};

}  // namespace

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

template <typename T>
BasicTensor<T>::BasicTensor() : storage_(std::make_shared<detail::TensorStorage<T>>()) {
  storage_->shape = {0};
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : storage_(std::make_shared<detail::TensorStorage<T>>()) {
  const Index n = shape_numel(shape);
  storage_->shape = std::move(shape);
  storage_->data.assign(static_cast<std::size_t>(n), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : storage_(std::make_shared<detail::TensorStorage<T>>()) {
  const Index n = shape_numel(shape);
  if (n != static_cast<Index>(data.size())) {
    throw ShapeError("shape " + shape_string(shape) + " holds " + std::to_string(n) +
                     " elements, got " + std::to_string(data.size()));
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(data);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor(Shape{}, std::vector<T>{value});
}

template <typename T>
Index BasicTensor<T>::dim(Index axis) const {
  const Index r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape()));
  }
  return storage_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return storage_->data[0];
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool flag) {
  if (!is_leaf()) throw StateError("requires_grad can only be set on leaf tensors");
  storage_->requires_grad = flag;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(storage_->grad.begin(), storage_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(storage_->shape, storage_->data);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  return BasicTensor(std::move(shape), storage_->data);
}

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::vector<BasicTensor<T>> inputs,
                           detail::BackwardFn<T> backward_fn) {
  BasicTensor<T> out(std::move(shape), std::move(data));
  if (!t_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const BasicTensor<T>& t) { return t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<detail::Node<T>>();
  node->sequence = g_node_sequence.fetch_add(1, std::memory_order_relaxed);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward_fn);
  out.storage_->requires_grad = true;
  out.storage_->node = std::move(node);
  return out;
}

template <typename T>
void backward(const BasicTensor<T>& root) {
  if (root.numel() != 1) {
    throw ShapeError("backward() needs a scalar root, got shape " + shape_string(root.shape()));
  }
  using Storage = detail::TensorStorage<T>;
  auto accumulate_leaf = [](Storage& s, std::span<const T> g) {
    if (s.grad.empty()) s.grad.assign(s.data.size(), T(0));
    for (std::size_t i = 0; i < g.size(); ++i) s.grad[i] += g[i];
  };
  Storage* root_storage = root.storage_.get();
  if (!root_storage->node) {
    if (root_storage->requires_grad) {
      const T one(1);
      accumulate_leaf(*root_storage, std::span<const T>(&one, 1));
    }
    return;
  }

  // Every recorded node reachable from the root.
  std::vector<std::shared_ptr<Storage>> order;
  std::unordered_set<Storage*> seen;
  std::vector<std::shared_ptr<Storage>> stack{root.storage_};
  seen.insert(root_storage);
  while (!stack.empty()) {
    auto s = std::move(stack.back());
    stack.pop_back();
    for (const auto& in : s->node->inputs) {
      const auto& is = in.storage_;
      if (is->node && seen.insert(is.get()).second) stack.push_back(is);
    }
    order.push_back(std::move(s));
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a->node->sequence > b->node->sequence;
  });

  std::unordered_map<Storage*, std::vector<T>> interior;
  interior[root_storage].assign(1, T(1));
  std::vector<std::vector<T>> leaf_buffers;
  std::vector<std::vector<T>*> slots;
  for (const auto& s : order) {
    auto it = interior.find(s.get());
    if (it == interior.end()) continue;  // output unused: gradient is zero
    const std::vector<T> gout = std::move(it->second);
    interior.erase(it);
    const auto& inputs = s->node->inputs;
    slots.assign(inputs.size(), nullptr);
    leaf_buffers.assign(inputs.size(), {});
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Storage* is = inputs[i].storage_.get();
      if (!is->requires_grad) continue;
      if (is->node) {
        auto& buf = interior[is];
        if (buf.empty()) buf.assign(is->data.size(), T(0));
        slots[i] = &buf;
      } else {
        leaf_buffers[i].assign(is->data.size(), T(0));
        slots[i] = &leaf_buffers[i];
      }
    }
    s->node->backward(std::span<const T>(gout), std::span<std::vector<T>* const>(slots));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Storage* is = inputs[i].storage_.get();
      if (slots[i] && !is->node) accumulate_leaf(*is, leaf_buffers[i]);
    }
  }
}

template <typename T>
BasicTensor<T> slice_batch(const BasicTensor<T>& x, Index begin, Index count) {
  if (x.rank() < 1 || begin < 0 || count < 0 || begin + count > x.dim(0)) {
    throw ShapeError("slice [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") out of range for " + shape_string(x.shape()));
  }
  const Index row = x.dim(0) ? x.numel() / x.dim(0) : 0;
  Shape shape = x.shape();
  shape[0] = count;
  auto first = x.data().begin() + begin * row;
  return BasicTensor<T>(std::move(shape), std::vector<T>(first, first + count * row));
}

template <typename T>
BasicTensor<T> gather_batch(const BasicTensor<T>& x, std::span<const Index> indices) {
  const Index rows = x.dim(0);
  const Index row = rows ? x.numel() / rows : 0;
  Shape shape = x.shape();
  shape[0] = static_cast<Index>(indices.size());
  std::vector<T> out;
  out.reserve(indices.size() * static_cast<std::size_t>(row));
  for (Index i : indices) {
    if (i < 0 || i >= rows) throw ShapeError("gather index out of range");
    auto first = x.data().begin() + i * row;
    out.insert(out.end(), first, first + row);
  }
  return BasicTensor<T>(std::move(shape), std::move(out));
}

template <typename T>
BasicTensor<T> stack(std::span<const BasicTensor<T>> items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  Shape shape = items.front().shape();
  std::vector<T> out;
  out.reserve(items.size() * static_cast<std::size_t>(items.front().numel()));
  for (const auto& t : items) {
    if (t.shape() != shape) throw ShapeError("stack of mismatched shapes");
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  shape.insert(shape.begin(), static_cast<Index>(items.size()));
  return BasicTensor<T>(std::move(shape), std::move(out));
}

#define GADFT_INSTANTIATE(T)                                                                 \
  template class BasicTensor<T>;                                                             \
  template BasicTensor<T> make_result(Shape, std::vector<T>, std::vector<BasicTensor<T>>,    \
                                      detail::BackwardFn<T>);                                \
  template void backward(const BasicTensor<T>&);                                             \
  template BasicTensor<T> slice_batch(const BasicTensor<T>&, Index, Index);                  \
  template BasicTensor<T> gather_batch(const BasicTensor<T>&, std::span<const Index>);       \
  template BasicTensor<T> stack(std::span<const BasicTensor<T>>);

GADFT_INSTANTIATE(float)
GADFT_INSTANTIATE(double)

#undef GADFT_INSTANTIATE

}  // namespace gadft
