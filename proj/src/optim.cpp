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

#include "gadft/optim.hpp"

#include <cmath>

#include "gadft/error.hpp"

namespace gadft {

namespace {

void validate(const AdamOptions& o) {
  if (!(o.lr > 0.0)) throw ParameterError("adam: learning rate must be positive");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0)) {
    throw ParameterError("adam: betas must lie in [0, 1)");
  }
  if (!(o.eps > 0.0)) throw ParameterError("adam: eps must be positive");
}

}  // namespace

template <typename T>
void adam_step(std::span<T> weights, std::span<const T> grads, AdamMoments& state,
               const AdamOptions& options) {
  validate(options);
  if (weights.size() != grads.size()) throw ShapeError("adam: weight/gradient length mismatch");
  if (state.m.empty()) {
    state.m.assign(weights.size(), 0.0);
    state.v.assign(weights.size(), 0.0);
  }
  if (state.m.size() != weights.size()) throw ShapeError("adam: state sized for another tensor");
  ++state.step;
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double g = grads[i];
    state.m[i] = options.beta1 * state.m[i] + (1.0 - options.beta1) * g;
    state.v[i] = options.beta2 * state.v[i] + (1.0 - options.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    weights[i] = static_cast<T>(weights[i] - options.lr * m_hat / (std::sqrt(v_hat) + options.eps));
  }
}

template <typename T>
Adam<T>::Adam(std::vector<BasicTensor<T>> parameters, AdamOptions options)
    : parameters_(std::move(parameters)), moments_(parameters_.size()), options_(options) {
  validate(options_);
}

template <typename T>
void Adam<T>::step() {
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    auto& p = parameters_[i];
    if (!p.has_grad()) continue;
    adam_step<T>(p.mutable_data(), p.grad(), moments_[i], options_);
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : parameters_) p.zero_grad();
}

template void adam_step(std::span<float>, std::span<const float>, AdamMoments&, const AdamOptions&);
template void adam_step(std::span<double>, std::span<const double>, AdamMoments&,
                        const AdamOptions&);
template class Adam<float>;
template class Adam<double>;

}  // namespace gadft
