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

#include "gadft/tensor.hpp"

// Differentiable layer primitives. All ops are templated on the scalar type
// and instantiated for float (storage default) and double (used by
// finite-difference checks). Reductions accumulate in double.
//
// Broadcasting is limited to a rank-1 operand matched against axis 1 (the
// channel axis); anything else needs an explicit reshape.

namespace gadft {

/// 2-D cross-correlation. input [N,C,H,W], weight [K,C,kh,kw], bias [K].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, Index stride = 1, Index padding = 0);

/// Per-channel affine normalization with stored statistics:
/// (x - mean) / sqrt(var + eps) * scale + shift. The statistics never
/// receive gradients.
template <typename T>
BasicTensor<T> frozen_norm(const BasicTensor<T>& input, const BasicTensor<T>& running_mean,
                           const BasicTensor<T>& running_var, const BasicTensor<T>& scale,
                           const BasicTensor<T>& shift, double eps);

/// x * sigmoid(x).
template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

/// [M,K] x [K,N].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Elementwise product of equally shaped tensors.
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor);

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, double value);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

template <typename T>
BasicTensor<T> reduce_sum(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& x);

/// Sums out one axis.
template <typename T>
BasicTensor<T> reduce_sum_axis(const BasicTensor<T>& x, Index axis);

/// Max over the two trailing (spatial) axes. The argmax of each window is
/// saved and receives the whole incoming gradient; ties go to the first
/// position in row-major order.
template <typename T>
BasicTensor<T> reduce_max_spatial(const BasicTensor<T>& x);

/// Mean over the two trailing (spatial) axes; [N,C,H,W] -> [N,C] is global
/// average pooling.
template <typename T>
BasicTensor<T> reduce_mean_spatial(const BasicTensor<T>& x);

/// Non-overlapping average pooling over the trailing two axes (window =
/// stride = factor). Trailing rows/columns that do not fill a window are
/// dropped.
template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, Index factor = 2);

/// Gradient at 0 is taken as 0.
template <typename T>
BasicTensor<T> sqrt(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x);

/// Subgradient 0 at the kink.
template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& x);

/// Mean cross-entropy of softmax(logits [N,K]) against integer labels.
template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

/// Bilinear resampling of one H x W plane with the align_corners=false
/// convention: output pixel (i, j) samples the source at
/// ((i + 0.5) * H / out_h - 0.5, (j + 0.5) * W / out_w - 0.5), with source
/// coordinates clamped at 0 below and the last row/column above.
template <typename T>
void bilinear_resize_plane(std::span<const T> in, Index height, Index width, std::span<T> out,
                           Index out_height, Index out_width);

/// Plane-wise bilinear resize of the trailing two axes. Not differentiable.
template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, Index out_height, Index out_width);

}  // namespace gadft
