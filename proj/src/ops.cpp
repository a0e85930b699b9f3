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

#include "gadft/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "gadft/error.hpp"

namespace gadft {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Grads = std::span<std::vector<T>* const>;

void require_rank(const auto& t, Index rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

// Unrolls the receptive fields of one sample into a [C*kh*kw, Ho*Wo] matrix.
template <typename T>
void im2col(const T* img, Index channels, Index height, Index width, Index kh, Index kw,
            Index stride, Index pad, Index out_h, Index out_w, T* cols) {
  for (Index c = 0; c < channels; ++c) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        T* row = cols + ((c * kh + ki) * kw + kj) * out_h * out_w;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index y = oy * stride - pad + ki;
          T* dst = row + oy * out_w;
          if (y < 0 || y >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = img + (c * height + y) * width;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index x = ox * stride - pad + kj;
            dst[ox] = (x >= 0 && x < width) ? src[x] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, Index channels, Index height, Index width, Index kh, Index kw,
            Index stride, Index pad, Index out_h, Index out_w, T* img) {
  for (Index c = 0; c < channels; ++c) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((c * kh + ki) * kw + kj) * out_h * out_w;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index y = oy * stride - pad + ki;
          if (y < 0 || y >= height) continue;
          T* dst = img + (c * height + y) * width;
          const T* src = row + oy * out_w;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index x = ox * stride - pad + kj;
            if (x >= 0 && x < width) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

// Channel-broadcast rule shared by add/sub: b is either the same shape as a
// or rank 1 with length a.dim(1).
template <typename T>
bool channel_broadcast(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return false;
  if (b.rank() == 1 && a.rank() >= 2 && b.dim(0) == a.dim(1)) return true;
  throw ShapeError(std::string(op) + ": cannot combine " + shape_string(a.shape()) + " with " +
                   shape_string(b.shape()));
}

template <typename T>
BasicTensor<T> add_sub(const BasicTensor<T>& a, const BasicTensor<T>& b, double sign,
                       const char* op) {
  const bool bcast = channel_broadcast(a, b, op);
  const Index n = a.numel();
  const Index channels = bcast ? a.dim(1) : 1;
  const Index inner = bcast ? n / (a.dim(0) * channels) : 1;
  std::vector<T> out(static_cast<std::size_t>(n));
  const auto ad = a.data();
  const auto bd = b.data();
  const T s = static_cast<T>(sign);
  for (Index i = 0; i < n; ++i) {
    const Index j = bcast ? (i / inner) % channels : i;
    out[i] = ad[i] + s * bd[j];
  }
  return make_result<T>(a.shape(), std::move(out), {a, b},
                        [=](std::span<const T> g, Grads<T> gin) {
                          if (gin[0]) {
                            for (Index i = 0; i < n; ++i) (*gin[0])[i] += g[i];
                          }
                          if (gin[1]) {
                            if (!bcast) {
                              for (Index i = 0; i < n; ++i) (*gin[1])[i] += s * g[i];
                            } else {
                              std::vector<double> acc(static_cast<std::size_t>(channels), 0.0);
                              for (Index i = 0; i < n; ++i) acc[(i / inner) % channels] += g[i];
                              for (Index c = 0; c < channels; ++c) {
                                (*gin[1])[c] += static_cast<T>(sign * acc[c]);
                              }
                            }
                          }
                        });
}

template <typename T, typename F, typename D>
BasicTensor<T> unary(const BasicTensor<T>& x, F f, D dfdx) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  std::vector<T> y = out;
  return make_result<T>(x.shape(), std::move(out), {x},
                        [x, y = std::move(y), dfdx](std::span<const T> g, Grads<T> gin) {
                          const auto xd = x.data();
                          auto& gx = *gin[0];
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            gx[i] += g[i] * dfdx(xd[i], y[i]);
                          }
                        });
}

// Splits a tensor into [outer, H*W] planes over its trailing two axes.
template <typename T>
std::pair<Index, Index> spatial_split(const BasicTensor<T>& x, const char* op) {
  if (x.rank() < 2) {
    throw ShapeError(std::string(op) + ": needs at least two axes, got " +
                     shape_string(x.shape()));
  }
  const Index plane = x.dim(-2) * x.dim(-1);
  if (plane == 0) throw ShapeError(std::string(op) + ": empty spatial extent");
  return {x.numel() / plane, plane};
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, Index stride, Index padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  require_rank(bias, 1, "conv2d bias");
  if (stride < 1) throw ParameterError("conv2d: stride must be positive");
  if (padding < 0) throw ParameterError("conv2d: padding must be non-negative");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index k = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c) {
    throw DimensionError("conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                         std::to_string(weight.dim(1)));
  }
  if (bias.dim(0) != k) throw DimensionError("conv2d: bias length differs from output channels");
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  const Index oh = (h + 2 * padding - kh) / stride + 1;
  const Index ow = (w + 2 * padding - kw) / stride + 1;
  const Index patch = c * kh * kw;
  const Index pixels = oh * ow;

  std::vector<T> out(static_cast<std::size_t>(n * k * pixels));
  {
    Eigen::Map<const RowMatrix<T>> wm(weight.raw(), k, patch);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(bias.raw(), k);
    RowMatrix<T> cols(patch, pixels);
    for (Index s = 0; s < n; ++s) {
      im2col(input.raw() + s * c * h * w, c, h, w, kh, kw, stride, padding, oh, ow, cols.data());
      Eigen::Map<RowMatrix<T>> om(out.data() + s * k * pixels, k, pixels);
      om.noalias() = wm * cols;
      om.colwise() += bv;
    }
  }
  return make_result<T>(
      {n, k, oh, ow}, std::move(out), {input, weight, bias},
      [=](std::span<const T> g, Grads<T> gin) {
        Eigen::Map<const RowMatrix<T>> wm(weight.raw(), k, patch);
        RowMatrix<T> cols(patch, pixels);
        RowMatrix<T> gcols(patch, pixels);
        for (Index s = 0; s < n; ++s) {
          Eigen::Map<const RowMatrix<T>> gm(g.data() + s * k * pixels, k, pixels);
          if (gin[1]) {
            im2col(input.raw() + s * c * h * w, c, h, w, kh, kw, stride, padding, oh, ow,
                   cols.data());
            Eigen::Map<RowMatrix<T>> gw(gin[1]->data(), k, patch);
            gw.noalias() += gm * cols.transpose();
          }
          if (gin[2]) {
            for (Index o = 0; o < k; ++o) {
              double acc = 0.0;
              for (Index p = 0; p < pixels; ++p) acc += gm(o, p);
              (*gin[2])[o] += static_cast<T>(acc);
            }
          }
          if (gin[0]) {
            gcols.noalias() = wm.transpose() * gm;
            col2im(gcols.data(), c, h, w, kh, kw, stride, padding, oh, ow,
                   gin[0]->data() + s * c * h * w);
          }
        }
      });
}

template <typename T>
BasicTensor<T> frozen_norm(const BasicTensor<T>& input, const BasicTensor<T>& running_mean,
                           const BasicTensor<T>& running_var, const BasicTensor<T>& scale,
                           const BasicTensor<T>& shift, double eps) {
  if (!(eps > 0.0)) throw ParameterError("frozen_norm: eps must be positive");
  if (input.rank() < 2) throw ShapeError("frozen_norm: input needs a channel axis");
  const Index channels = input.dim(1);
  for (const auto* t : {&running_mean, &running_var, &scale, &shift}) {
    if (t->rank() != 1 || t->dim(0) != channels) {
      throw DimensionError("frozen_norm: per-channel tensors must have length " +
                           std::to_string(channels));
    }
  }
  const Index n = input.numel();
  const Index inner = n / (input.dim(0) * channels);
  std::vector<double> inv_std(static_cast<std::size_t>(channels));
  for (Index c = 0; c < channels; ++c) {
    const double v = running_var.data()[c];
    if (v < 0.0) throw ParameterError("frozen_norm: negative running variance");
    inv_std[c] = 1.0 / std::sqrt(v + eps);
  }
  std::vector<T> out(static_cast<std::size_t>(n));
  const auto x = input.data();
  for (Index i = 0; i < n; ++i) {
    const Index c = (i / inner) % channels;
    out[i] = static_cast<T>((x[i] - running_mean.data()[c]) * inv_std[c] * scale.data()[c] +
                            shift.data()[c]);
  }
  // Statistics are passed as inputs only to keep them alive; they never
  // receive gradient.
  return make_result<T>(
      input.shape(), std::move(out), {input, scale, shift},
      [=](std::span<const T> g, Grads<T> gin) {
        const auto x = input.data();
        std::vector<double> gs(static_cast<std::size_t>(channels), 0.0);
        std::vector<double> gb(static_cast<std::size_t>(channels), 0.0);
        for (Index i = 0; i < n; ++i) {
          const Index c = (i / inner) % channels;
          if (gin[0]) (*gin[0])[i] += static_cast<T>(g[i] * inv_std[c] * scale.data()[c]);
          gs[c] += g[i] * (x[i] - running_mean.data()[c]) * inv_std[c];
          gb[c] += g[i];
        }
        for (Index c = 0; c < channels; ++c) {
          if (gin[1]) (*gin[1])[c] += static_cast<T>(gs[c]);
          if (gin[2]) (*gin[2])[c] += static_cast<T>(gb[c]);
        }
      });
}

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& x) {
  return unary(
      x,
      [](T v) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return v * s;
      },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<T> out(static_cast<std::size_t>(m * n));
  Eigen::Map<RowMatrix<T>>(out.data(), m, n).noalias() =
      Eigen::Map<const RowMatrix<T>>(a.raw(), m, k) * Eigen::Map<const RowMatrix<T>>(b.raw(), k, n);
  return make_result<T>({m, n}, std::move(out), {a, b},
                        [=](std::span<const T> g, Grads<T> gin) {
                          Eigen::Map<const RowMatrix<T>> gm(g.data(), m, n);
                          if (gin[0]) {
                            Eigen::Map<RowMatrix<T>>(gin[0]->data(), m, k).noalias() +=
                                gm * Eigen::Map<const RowMatrix<T>>(b.raw(), k, n).transpose();
                          }
                          if (gin[1]) {
                            Eigen::Map<RowMatrix<T>>(gin[1]->data(), k, n).noalias() +=
                                Eigen::Map<const RowMatrix<T>>(a.raw(), m, k).transpose() * gm;
                          }
                        });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return add_sub(a, b, 1.0, "add");
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return add_sub(a, b, -1.0, "sub");
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const Index n = a.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b},
                        [=](std::span<const T> g, Grads<T> gin) {
                          for (Index i = 0; i < n; ++i) {
                            if (gin[0]) (*gin[0])[i] += g[i] * b.data()[i];
                            if (gin[1]) (*gin[1])[i] += g[i] * a.data()[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor) {
  const T f = static_cast<T>(factor);
  return unary(x, [f](T v) { return v * f; }, [f](T, T) { return f; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, double value) {
  const T c = static_cast<T>(value);
  return unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x},
                        [](std::span<const T> g, Grads<T> gin) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                        });
}

template <typename T>
BasicTensor<T> reduce_sum(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  return make_result<T>({}, {static_cast<T>(acc)}, {x}, [](std::span<const T> g, Grads<T> gin) {
    for (auto& v : *gin[0]) v += g[0];
  });
}

template <typename T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("reduce_mean of an empty tensor");
  const double n = static_cast<double>(x.numel());
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  return make_result<T>({}, {static_cast<T>(acc / n)}, {x},
                        [n](std::span<const T> g, Grads<T> gin) {
                          const T share = static_cast<T>(g[0] / n);
                          for (auto& v : *gin[0]) v += share;
                        });
}

template <typename T>
BasicTensor<T> reduce_sum_axis(const BasicTensor<T>& x, Index axis) {
  const Index r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("reduce_sum_axis: axis out of range");
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= x.dim(i);
  for (Index i = axis + 1; i < r; ++i) inner *= x.dim(i);
  const Index len = x.dim(axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + axis);
  std::vector<T> out(static_cast<std::size_t>(outer * inner));
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      double acc = 0.0;
      for (Index a = 0; a < len; ++a) acc += x.data()[(o * len + a) * inner + i];
      out[o * inner + i] = static_cast<T>(acc);
    }
  }
  return make_result<T>(std::move(shape), std::move(out), {x},
                        [=](std::span<const T> g, Grads<T> gin) {
                          for (Index o = 0; o < outer; ++o) {
                            for (Index a = 0; a < len; ++a) {
                              for (Index i = 0; i < inner; ++i) {
                                (*gin[0])[(o * len + a) * inner + i] += g[o * inner + i];
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> reduce_max_spatial(const BasicTensor<T>& x) {
  const auto [outer, plane] = spatial_split(x, "reduce_max_spatial");
  Shape shape(x.shape().begin(), x.shape().end() - 2);
  std::vector<T> out(static_cast<std::size_t>(outer));
  std::vector<Index> argmax(static_cast<std::size_t>(outer));
  for (Index o = 0; o < outer; ++o) {
    const T* p = x.raw() + o * plane;
    Index best = 0;
    for (Index i = 1; i < plane; ++i) {
      if (p[i] > p[best]) best = i;
    }
    argmax[o] = o * plane + best;
    out[o] = p[best];
  }
  return make_result<T>(std::move(shape), std::move(out), {x},
                        [argmax = std::move(argmax)](std::span<const T> g, Grads<T> gin) {
                          for (std::size_t o = 0; o < argmax.size(); ++o) {
                            (*gin[0])[argmax[o]] += g[o];
                          }
                        });
}

template <typename T>
BasicTensor<T> reduce_mean_spatial(const BasicTensor<T>& x) {
  const auto [outer, plane] = spatial_split(x, "reduce_mean_spatial");
  Shape shape(x.shape().begin(), x.shape().end() - 2);
  std::vector<T> out(static_cast<std::size_t>(outer));
  for (Index o = 0; o < outer; ++o) {
    double acc = 0.0;
    const T* p = x.raw() + o * plane;
    for (Index i = 0; i < plane; ++i) acc += p[i];
    out[o] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return make_result<T>(std::move(shape), std::move(out), {x},
                        [outer, plane](std::span<const T> g, Grads<T> gin) {
                          for (Index o = 0; o < outer; ++o) {
                            const T share = static_cast<T>(g[o] / static_cast<double>(plane));
                            T* d = gin[0]->data() + o * plane;
                            for (Index i = 0; i < plane; ++i) d[i] += share;
                          }
                        });
}

template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, Index factor) {
  if (factor < 1) throw ParameterError("avg_pool2d: factor must be positive");
  const auto [outer, plane] = spatial_split(x, "avg_pool2d");
  const Index h = x.dim(-2), w = x.dim(-1);
  const Index oh = h / factor, ow = w / factor;
  if (oh == 0 || ow == 0) throw ShapeError("avg_pool2d: input smaller than the window");
  Shape shape = x.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  std::vector<T> out(static_cast<std::size_t>(outer * oh * ow));
  for (Index o = 0; o < outer; ++o) {
    const T* src = x.raw() + o * plane;
    T* dst = out.data() + o * oh * ow;
    for (Index y = 0; y < oh; ++y) {
      for (Index xx = 0; xx < ow; ++xx) {
        double acc = 0.0;
        for (Index dy = 0; dy < factor; ++dy) {
          for (Index dx = 0; dx < factor; ++dx) {
            acc += src[(y * factor + dy) * w + xx * factor + dx];
          }
        }
        dst[y * ow + xx] = static_cast<T>(acc * inv);
      }
    }
  }
  return make_result<T>(std::move(shape), std::move(out), {x},
                        [=](std::span<const T> g, Grads<T> gin) {
                          for (Index o = 0; o < outer; ++o) {
                            const T* gs = g.data() + o * oh * ow;
                            T* gd = gin[0]->data() + o * plane;
                            for (Index y = 0; y < oh; ++y) {
                              for (Index xx = 0; xx < ow; ++xx) {
                                const T share = static_cast<T>(gs[y * ow + xx] * inv);
                                for (Index dy = 0; dy < factor; ++dy) {
                                  for (Index dx = 0; dx < factor; ++dx) {
                                    gd[(y * factor + dy) * w + xx * factor + dx] += share;
                                  }
                                }
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> sqrt(const BasicTensor<T>& x) {
  for (T v : x.data()) {
    if (v < T(0)) throw ParameterError("sqrt of a negative value");
  }
  return unary(
      x, [](T v) { return static_cast<T>(std::sqrt(v)); },
      [](T, T y) { return y > T(0) ? static_cast<T>(0.5 / y) : T(0); });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  return unary(
      x, [](T v) { return static_cast<T>(std::log(v)); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  return unary(
      x, [](T v) { return static_cast<T>(std::exp(v)); }, [](T, T y) { return y; });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& x) {
  return unary(
      x, [](T v) { return v < T(0) ? -v : v; },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("softmax_cross_entropy: label count differs from batch size");
  }
  std::vector<T> probs(static_cast<std::size_t>(n * k));
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw ParameterError("label out of range");
    const T* row = logits.raw() + i * k;
    const double top = *std::max_element(row, row + k);
    double z = 0.0;
    for (Index j = 0; j < k; ++j) z += std::exp(row[j] - top);
    for (Index j = 0; j < k; ++j) probs[i * k + j] = static_cast<T>(std::exp(row[j] - top) / z);
    loss += -(row[labels[i]] - top - std::log(z));
  }
  std::vector<int> targets(labels.begin(), labels.end());
  return make_result<T>({}, {static_cast<T>(loss / static_cast<double>(n))}, {logits},
                        [=, probs = std::move(probs)](std::span<const T> g, Grads<T> gin) {
                          const double f = g[0] / static_cast<double>(n);
                          for (Index i = 0; i < n; ++i) {
                            for (Index j = 0; j < k; ++j) {
                              const double onehot = (j == targets[i]) ? 1.0 : 0.0;
                              (*gin[0])[i * k + j] += static_cast<T>(f * (probs[i * k + j] - onehot));
                            }
                          }
                        });
}

template <typename T>
void bilinear_resize_plane(std::span<const T> in, Index height, Index width, std::span<T> out,
                           Index out_height, Index out_width) {
  if (height < 1 || width < 1 || out_height < 1 || out_width < 1) {
    throw ShapeError("bilinear_resize: empty plane");
  }
  const double sy = static_cast<double>(height) / static_cast<double>(out_height);
  const double sx = static_cast<double>(width) / static_cast<double>(out_width);
  for (Index i = 0; i < out_height; ++i) {
    const double fy = std::max(0.0, (static_cast<double>(i) + 0.5) * sy - 0.5);
    const Index y0 = std::min(static_cast<Index>(fy), height - 1);
    const Index y1 = std::min(y0 + 1, height - 1);
    const double ly = fy - static_cast<double>(y0);
    for (Index j = 0; j < out_width; ++j) {
      const double fx = std::max(0.0, (static_cast<double>(j) + 0.5) * sx - 0.5);
      const Index x0 = std::min(static_cast<Index>(fx), width - 1);
      const Index x1 = std::min(x0 + 1, width - 1);
      const double lx = fx - static_cast<double>(x0);
      const double top = (1.0 - lx) * in[y0 * width + x0] + lx * in[y0 * width + x1];
      const double bottom = (1.0 - lx) * in[y1 * width + x0] + lx * in[y1 * width + x1];
      out[i * out_width + j] = static_cast<T>((1.0 - ly) * top + ly * bottom);
    }
  }
}

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, Index out_height, Index out_width) {
  const auto [outer, plane] = spatial_split(x, "bilinear_resize");
  const Index h = x.dim(-2), w = x.dim(-1);
  Shape shape = x.shape();
  shape[shape.size() - 2] = out_height;
  shape[shape.size() - 1] = out_width;
  BasicTensor<T> out(shape);
  const Index out_plane = out_height * out_width;
  for (Index o = 0; o < outer; ++o) {
    bilinear_resize_plane<T>(x.data().subspan(o * plane, plane), h, w,
                             out.mutable_data().subspan(o * out_plane, out_plane), out_height,
                             out_width);
  }
  return out;
}

#define GADFT_INSTANTIATE(T)                                                                    \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                 const BasicTensor<T>&, Index, Index);                          \
  template BasicTensor<T> frozen_norm(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                      const BasicTensor<T>&, const BasicTensor<T>&,             \
                                      const BasicTensor<T>&, double);                           \
  template BasicTensor<T> silu(const BasicTensor<T>&);                                          \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                          \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                 \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, double);                            \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                \
  template BasicTensor<T> reduce_sum(const BasicTensor<T>&);                                    \
  template BasicTensor<T> reduce_mean(const BasicTensor<T>&);                                   \
  template BasicTensor<T> reduce_sum_axis(const BasicTensor<T>&, Index);                        \
  template BasicTensor<T> reduce_max_spatial(const BasicTensor<T>&);                            \
  template BasicTensor<T> reduce_mean_spatial(const BasicTensor<T>&);                           \
  template BasicTensor<T> avg_pool2d(const BasicTensor<T>&, Index);                             \
  template BasicTensor<T> sqrt(const BasicTensor<T>&);                                          \
  template BasicTensor<T> log(const BasicTensor<T>&);                                           \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                           \
  template BasicTensor<T> square(const BasicTensor<T>&);                                        \
  template BasicTensor<T> abs(const BasicTensor<T>&);                                           \
  template BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);   \
  template void bilinear_resize_plane(std::span<const T>, Index, Index, std::span<T>, Index,    \
                                      Index);                                                   \
  template BasicTensor<T> bilinear_resize(const BasicTensor<T>&, Index, Index);

GADFT_INSTANTIATE(float)
GADFT_INSTANTIATE(double)

#undef GADFT_INSTANTIATE

}  // namespace gadft
