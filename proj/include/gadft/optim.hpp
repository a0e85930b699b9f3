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

#include <span>
#include <vector>

#include "gadft/tensor.hpp"

namespace gadft {

struct AdamOptions {
  double lr = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments of one parameter plus its step count.
struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

/// One bias-corrected Adam update in place. Moments are lazily sized on the
/// first call.
template <typename T>
void adam_step(std::span<T> weights, std::span<const T> grads, AdamMoments& state,
               const AdamOptions& options);

/// Adam over a fixed parameter list. Parameters without a gradient buffer
/// are skipped for that step.
template <typename T>
class Adam {
 public:
  Adam(std::vector<BasicTensor<T>> parameters, AdamOptions options);

  void step();
  void zero_grad();
  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

 private:
  std::vector<BasicTensor<T>> parameters_;
  std::vector<AdamMoments> moments_;
  AdamOptions options_;
};

}  // namespace gadft
