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

#include "m2unet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "m2unet/error.hpp"

namespace m2unet::ops {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op, const char* what) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + to_string(x.shape()));
  }
}

template <typename T>
std::vector<T> copy_values(const Tensor<T>& x) {
  auto v = x.values();
  return {v.begin(), v.end()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b},
                        [](std::span<const T>, std::span<const T> g, std::span<const std::span<T>> gi) {
                          for (auto& gin : gi) {
                            for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += g[i];
                          }
                        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b},
                        [](std::span<const T>, std::span<const T> g, std::span<const std::span<T>> gi) {
                          for (std::size_t i = 0; i < gi[0].size(); ++i) gi[0][i] += g[i];
                          for (std::size_t i = 0; i < gi[1].size(); ++i) gi[1][i] -= g[i];
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b},
                        [a, b](std::span<const T>, std::span<const T> g,
                               std::span<const std::span<T>> gi) {
                          auto av = a.values();
                          auto bv = b.values();
                          for (std::size_t i = 0; i < gi[0].size(); ++i) gi[0][i] += g[i] * bv[i];
                          for (std::size_t i = 0; i < gi[1].size(); ++i) gi[1][i] += g[i] * av[i];
                        });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "div");
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return make_result<T>("div", a.shape(), std::move(out), {a, b},
                        [b](std::span<const T> out, std::span<const T> g,
                            std::span<const std::span<T>> gi) {
                          auto bv = b.values();
                          for (std::size_t i = 0; i < gi[0].size(); ++i) gi[0][i] += g[i] / bv[i];
                          for (std::size_t i = 0; i < gi[1].size(); ++i) {
                            gi[1][i] -= g[i] * out[i] / bv[i];
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * s;
  return make_result<T>("scale", x.shape(), std::move(out), {x},
                        [s](std::span<const T>, std::span<const T> g,
                            std::span<const std::span<T>> gi) {
                          for (std::size_t i = 0; i < gi[0].size(); ++i) gi[0][i] += g[i] * s;
                        });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + s;
  return make_result<T>("add_scalar", x.shape(), std::move(out), {x},
                        [](std::span<const T>, std::span<const T> g, std::span<const std::span<T>> gi) {
                          for (std::size_t i = 0; i < gi[0].size(); ++i) gi[0][i] += g[i];
                        });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(bias, 1, "add_bias", "bias");
  if (x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) +
                         " does not match last axis of " + to_string(x.shape()));
  }
  const std::size_t c = bias.dim(0);
  auto xv = x.values();
  auto bv = bias.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % c];
  return make_result<T>("add_bias", x.shape(), std::move(out), {x, bias},
                        [c](std::span<const T>, std::span<const T> g,
                            std::span<const std::span<T>> gi) {
                          for (std::size_t i = 0; i < gi[0].size(); ++i) gi[0][i] += g[i];
                          if (!gi[1].empty()) {
                            for (std::size_t i = 0; i < g.size(); ++i) gi[1][i % c] += g[i];
                          }
                        });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  return make_result<T>("sum", Shape{}, {acc}, {x},
                        [](std::span<const T>, std::span<const T> g, std::span<const std::span<T>> gi) {
                          for (auto& v : gi[0]) v += g[0];
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.numel());
  T acc = 0;
  for (T v : x.values()) acc += v;
  return make_result<T>("mean", Shape{}, {acc * inv}, {x},
                        [inv](std::span<const T>, std::span<const T> g,
                              std::span<const std::span<T>> gi) {
                          for (auto& v : gi[0]) v += g[0] * inv;
                        });
}

template <typename T>
Tensor<T> sum_per_sample(const Tensor<T>& x) {
  if (x.rank() < 1) throw DimensionError("sum_per_sample: needs rank >= 1");
  const std::size_t n = x.dim(0);
  const std::size_t inner = x.numel() / n;
  auto xv = x.values();
  std::vector<T> out(n, T(0));
  for (std::size_t s = 0; s < n; ++s) {
    T acc = 0;
    for (std::size_t i = 0; i < inner; ++i) acc += xv[s * inner + i];
    out[s] = acc;
  }
  return make_result<T>("sum_per_sample", Shape{n}, std::move(out), {x},
                        [inner](std::span<const T>, std::span<const T> g,
                                std::span<const std::span<T>> gi) {
                          for (std::size_t i = 0; i < gi[0].size(); ++i) gi[0][i] += g[i / inner];
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return make_result<T>("reshape", std::move(shape), copy_values(x), {x},
                        [](std::span<const T>, std::span<const T> g, std::span<const std::span<T>> gi) {
                          for (std::size_t i = 0; i < gi[0].size(); ++i) gi[0][i] += g[i];
                        });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const auto& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  if (axes.size() != rank) throw DimensionError("permute: axes rank mismatch for " + to_string(in_shape));
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: axes are not a permutation");
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_stride[i] = in_strides[axes[i]];
  }
  // Source offset of every output element, in output order.
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t o = 0; o < n; ++o) {
    src[o] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      offset += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      offset -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  auto xv = x.values();
  std::vector<T> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = xv[src[o]];
  return make_result<T>("permute", std::move(out_shape), std::move(out), {x},
                        [src = std::move(src)](std::span<const T>, std::span<const T> g,
                                               std::span<const std::span<T>> gi) {
                          for (std::size_t o = 0; o < g.size(); ++o) gi[0][src[o]] += g[o];
                        });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw DimensionError("concat_channels: leading extents differ " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
  const std::size_t ca = a.shape().back();
  const std::size_t cb = b.shape().back();
  const std::size_t rows = a.numel() / ca;
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(rows * (ca + cb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + r * ca, ca, out.begin() + r * (ca + cb));
    std::copy_n(bv.begin() + r * cb, cb, out.begin() + r * (ca + cb) + ca);
  }
  Shape shape = a.shape();
  shape.back() = ca + cb;
  return make_result<T>("concat_channels", std::move(shape), std::move(out), {a, b},
                        [ca, cb, rows](std::span<const T>, std::span<const T> g,
                                       std::span<const std::span<T>> gi) {
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* src = g.data() + r * (ca + cb);
                            if (!gi[0].empty()) {
                              for (std::size_t c = 0; c < ca; ++c) gi[0][r * ca + c] += src[c];
                            }
                            if (!gi[1].empty()) {
                              for (std::size_t c = 0; c < cb; ++c) gi[1][r * cb + c] += src[ca + c];
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Matrix products

namespace {

// c[M×N] += a[M×K] · b[K×N]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[M×K] += g[M×N] · b[K×N]ᵀ
template <typename T>
void gemm_nt(const T* g, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[K×N] += a[M×K]ᵀ · g[M×N]
template <typename T>
void gemm_tn(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result<T>("matmul", Shape{m, n}, std::move(out), {a, b},
                        [a, b, m, k, n](std::span<const T>, std::span<const T> g,
                                        std::span<const std::span<T>> gi) {
                          if (!gi[0].empty()) gemm_nt(g.data(), b.values().data(), gi[0].data(), m, k, n);
                          if (!gi[1].empty()) gemm_tn(a.values().data(), g.data(), gi[1].data(), m, k, n);
                        });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> out(batch * m * n, T(0));
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nn(a.values().data() + s * m * k, b.values().data() + s * k * n, out.data() + s * m * n, m,
            k, n);
  }
  return make_result<T>(
      "bmm", Shape{batch, m, n}, std::move(out), {a, b},
      [a, b, batch, m, k, n](std::span<const T>, std::span<const T> g,
                             std::span<const std::span<T>> gi) {
        for (std::size_t s = 0; s < batch; ++s) {
          const T* gs = g.data() + s * m * n;
          if (!gi[0].empty()) {
            gemm_nt(gs, b.values().data() + s * k * n, gi[0].data() + s * m * k, m, k, n);
          }
          if (!gi[1].empty()) {
            gemm_tn(a.values().data() + s * m * k, gs, gi[1].data() + s * k * n, m, k, n);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions

ConvGeometry conv_geometry(std::size_t in, std::size_t kernel, const ConvSpec& spec) {
  if (spec.stride == 0) throw ConfigError("conv: stride must be positive");
  if (spec.padding == ConvSpec::Padding::kSame) {
    const std::size_t out = (in + spec.stride - 1) / spec.stride;
    const std::size_t needed = (out - 1) * spec.stride + kernel;
    const std::size_t total = needed > in ? needed - in : 0;
    return {out, total / 2};
  }
  if (in + 2 * spec.pad < kernel) {
    throw DimensionError("conv: non-positive output size (input " + std::to_string(in) +
                         ", kernel " + std::to_string(kernel) + ", pad " +
                         std::to_string(spec.pad) + ")");
  }
  return {(in + 2 * spec.pad - kernel) / spec.stride + 1, spec.pad};
}

namespace {

struct ConvDims {
  std::size_t n, h, w, cin, kh, kw, cout, groups, cin_g, cout_g, oh, ow, stride, pad_h, pad_w;
};

template <typename T>
ConvDims check_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                    const ConvSpec& spec) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weight");
  ConvDims d{};
  d.n = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.cin = x.dim(3);
  d.kh = w.dim(0);
  d.kw = w.dim(1);
  d.cout = w.dim(3);
  d.groups = spec.groups;
  if (d.groups == 0 || d.cin % d.groups != 0 || d.cout % d.groups != 0) {
    throw DimensionError("conv2d: groups " + std::to_string(spec.groups) +
                         " must divide input channels " + std::to_string(d.cin) +
                         " and output channels " + std::to_string(d.cout));
  }
  d.cin_g = d.cin / d.groups;
  d.cout_g = d.cout / d.groups;
  if (d.kh != spec.kernel_h || d.kw != spec.kernel_w || w.dim(2) != d.cin_g) {
    throw DimensionError("conv2d: weight " + to_string(w.shape()) + " does not match input " +
                         to_string(x.shape()) + " with kernel " + std::to_string(spec.kernel_h) +
                         "x" + std::to_string(spec.kernel_w) + " and groups " +
                         std::to_string(spec.groups));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.cout)) {
    throw DimensionError("conv2d: bias " + to_string(bias.shape()) + " does not match " +
                         std::to_string(d.cout) + " output channels");
  }
  d.stride = spec.stride;
  auto gh = conv_geometry(d.h, d.kh, spec);
  auto gw = conv_geometry(d.w, d.kw, spec);
  d.oh = gh.out;
  d.ow = gw.out;
  d.pad_h = gh.pad_before;
  d.pad_w = gw.pad_before;
  if (d.oh == 0 || d.ow == 0) throw DimensionError("conv2d: non-positive output size");
  return d;
}

// Calls fn(ky, kx, iy, ix) for every in-bounds tap of output pixel (oy, ox).
template <typename Fn>
inline void for_each_tap(const ConvDims& d, std::size_t oy, std::size_t ox, Fn&& fn) {
  for (std::size_t ky = 0; ky < d.kh; ++ky) {
    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + ky) -
                              static_cast<std::ptrdiff_t>(d.pad_h);
    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
    for (std::size_t kx = 0; kx < d.kw; ++kx) {
      const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                                static_cast<std::ptrdiff_t>(d.pad_w);
      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
      fn(ky, kx, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
    }
  }
}

template <typename T>
void conv_forward(const ConvDims& d, const T* x, const T* w, const T* bias, T* out) {
  const bool depthwise = d.cin_g == 1 && d.cout_g == 1;
  for (std::size_t b = 0; b < d.n; ++b) {
    for (std::size_t oy = 0; oy < d.oh; ++oy) {
      for (std::size_t ox = 0; ox < d.ow; ++ox) {
        T* o = out + ((b * d.oh + oy) * d.ow + ox) * d.cout;
        if (bias) std::copy_n(bias, d.cout, o);
        for_each_tap(d, oy, ox, [&](std::size_t ky, std::size_t kx, std::size_t iy, std::size_t ix) {
          const T* xp = x + ((b * d.h + iy) * d.w + ix) * d.cin;
          const T* wp = w + (ky * d.kw + kx) * d.cin_g * d.cout;
          if (depthwise) {
            for (std::size_t c = 0; c < d.cout; ++c) o[c] += xp[c] * wp[c];
          } else if (d.groups == 1) {
            for (std::size_t ci = 0; ci < d.cin; ++ci) {
              const T xv = xp[ci];
              const T* wr = wp + ci * d.cout;
              for (std::size_t co = 0; co < d.cout; ++co) o[co] += xv * wr[co];
            }
          } else {
            for (std::size_t g = 0; g < d.groups; ++g) {
              for (std::size_t ci = 0; ci < d.cin_g; ++ci) {
                const T xv = xp[g * d.cin_g + ci];
                const T* wr = wp + ci * d.cout + g * d.cout_g;
                T* og = o + g * d.cout_g;
                for (std::size_t co = 0; co < d.cout_g; ++co) og[co] += xv * wr[co];
              }
            }
          }
        });
      }
    }
  }
}

template <typename T>
void conv_backward(const ConvDims& d, const T* x, const T* w, const T* g, T* gx, T* gw, T* gb) {
  const bool depthwise = d.cin_g == 1 && d.cout_g == 1;
  for (std::size_t b = 0; b < d.n; ++b) {
    for (std::size_t oy = 0; oy < d.oh; ++oy) {
      for (std::size_t ox = 0; ox < d.ow; ++ox) {
        const T* go = g + ((b * d.oh + oy) * d.ow + ox) * d.cout;
        if (gb) {
          for (std::size_t c = 0; c < d.cout; ++c) gb[c] += go[c];
        }
        for_each_tap(d, oy, ox, [&](std::size_t ky, std::size_t kx, std::size_t iy, std::size_t ix) {
          const std::size_t xoff = ((b * d.h + iy) * d.w + ix) * d.cin;
          const std::size_t woff = (ky * d.kw + kx) * d.cin_g * d.cout;
          const T* xp = x + xoff;
          const T* wp = w + woff;
          if (depthwise) {
            if (gx) {
              for (std::size_t c = 0; c < d.cout; ++c) gx[xoff + c] += go[c] * wp[c];
            }
            if (gw) {
              for (std::size_t c = 0; c < d.cout; ++c) gw[woff + c] += go[c] * xp[c];
            }
            return;
          }
          for (std::size_t g2 = 0; g2 < d.groups; ++g2) {
            const T* gog = go + g2 * d.cout_g;
            for (std::size_t ci = 0; ci < d.cin_g; ++ci) {
              const std::size_t cin = g2 * d.cin_g + ci;
              const std::size_t wr = ci * d.cout + g2 * d.cout_g;
              if (gx) {
                T acc = 0;
                for (std::size_t co = 0; co < d.cout_g; ++co) acc += gog[co] * wp[wr + co];
                gx[xoff + cin] += acc;
              }
              if (gw) {
                const T xv = xp[cin];
                T* gwr = gw + woff + wr;
                for (std::size_t co = 0; co < d.cout_g; ++co) gwr[co] += xv * gog[co];
              }
            }
          }
        });
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  const ConvDims d = check_conv(x, w, bias, spec);
  std::vector<T> out(d.n * d.oh * d.ow * d.cout, T(0));
  conv_forward(d, x.values().data(), w.values().data(),
               bias.defined() ? bias.values().data() : nullptr, out.data());
  std::vector<Tensor<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>("conv2d", Shape{d.n, d.oh, d.ow, d.cout}, std::move(out), std::move(inputs),
                        [x, w, d](std::span<const T>, std::span<const T> g,
                                  std::span<const std::span<T>> gi) {
                          T* gb = gi.size() > 2 && !gi[2].empty() ? gi[2].data() : nullptr;
                          conv_backward(d, x.values().data(), w.values().data(), g.data(),
                                        gi[0].empty() ? nullptr : gi[0].data(),
                                        gi[1].empty() ? nullptr : gi[1].data(), gb);
                        });
}

template <typename T>
Tensor<T> transpose_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::size_t stride) {
  if (stride != 2 && stride != 4) {
    throw ConfigError("transpose_conv2d: unsupported stride " + std::to_string(stride) +
                      " (expected 2 or 4)");
  }
  require_rank(x, 4, "transpose_conv2d", "input");
  require_rank(w, 4, "transpose_conv2d", "weight");
  const std::size_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), cin = x.dim(3);
  if (w.dim(0) != stride || w.dim(1) != stride || w.dim(2) != cin) {
    throw DimensionError("transpose_conv2d: weight " + to_string(w.shape()) +
                         " must be [stride, stride, Cin, Cout] for input " + to_string(x.shape()));
  }
  const std::size_t cout = w.dim(3);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw DimensionError("transpose_conv2d: bias " + to_string(bias.shape()) + " mismatch");
  }
  const std::size_t oh = h * stride, ow = wd * stride;
  std::vector<T> out(n * oh * ow * cout, T(0));
  const T* xv = x.values().data();
  const T* wv = w.values().data();
  const T* bv = bias.defined() ? bias.values().data() : nullptr;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < wd; ++j) {
        const T* xp = xv + ((b * h + i) * wd + j) * cin;
        for (std::size_t a = 0; a < stride; ++a) {
          for (std::size_t c = 0; c < stride; ++c) {
            T* o = out.data() + ((b * oh + i * stride + a) * ow + j * stride + c) * cout;
            if (bv) std::copy_n(bv, cout, o);
            const T* wp = wv + (a * stride + c) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T v = xp[ci];
              const T* wr = wp + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) o[co] += v * wr[co];
            }
          }
        }
      }
    }
  }
  std::vector<Tensor<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(
      "transpose_conv2d", Shape{n, oh, ow, cout}, std::move(out), std::move(inputs),
      [x, w, n, h, wd, cin, cout, stride, oh, ow](std::span<const T>, std::span<const T> g,
                                                  std::span<const std::span<T>> gi) {
        const T* xv = x.values().data();
        const T* wv = w.values().data();
        T* gx = gi[0].empty() ? nullptr : gi[0].data();
        T* gw = gi[1].empty() ? nullptr : gi[1].data();
        T* gb = gi.size() > 2 && !gi[2].empty() ? gi[2].data() : nullptr;
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < wd; ++j) {
              const std::size_t xoff = ((b * h + i) * wd + j) * cin;
              for (std::size_t a = 0; a < stride; ++a) {
                for (std::size_t c = 0; c < stride; ++c) {
                  const T* go = g.data() + ((b * oh + i * stride + a) * ow + j * stride + c) * cout;
                  const std::size_t woff = (a * stride + c) * cin * cout;
                  if (gb) {
                    for (std::size_t co = 0; co < cout; ++co) gb[co] += go[co];
                  }
                  for (std::size_t ci = 0; ci < cin; ++ci) {
                    const T* wr = wv + woff + ci * cout;
                    if (gx) {
                      T acc = 0;
                      for (std::size_t co = 0; co < cout; ++co) acc += go[co] * wr[co];
                      gx[xoff + ci] += acc;
                    }
                    if (gw) {
                      const T v = xv[xoff + ci];
                      T* gwr = gw + woff + ci * cout;
                      for (std::size_t co = 0; co < cout; ++co) gwr[co] += v * go[co];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t scale) {
  if (scale < 1) throw ConfigError("upsample_nearest: scale must be >= 1");
  require_rank(x, 4, "upsample_nearest", "input");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = h * scale, ow = w * scale;
  const T* xv = x.values().data();
  std::vector<T> out(n * oh * ow * c);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::copy_n(xv + ((b * h + i / scale) * w + j / scale) * c, c,
                    out.data() + ((b * oh + i) * ow + j) * c);
      }
    }
  }
  return make_result<T>("upsample_nearest", Shape{n, oh, ow, c}, std::move(out), {x},
                        [n, h, w, c, scale, oh, ow](std::span<const T>, std::span<const T> g,
                                                    std::span<const std::span<T>> gi) {
                          T* gx = gi[0].data();
                          for (std::size_t b = 0; b < n; ++b) {
                            for (std::size_t i = 0; i < oh; ++i) {
                              for (std::size_t j = 0; j < ow; ++j) {
                                const T* go = g.data() + ((b * oh + i) * ow + j) * c;
                                T* dst = gx + ((b * h + i / scale) * w + j / scale) * c;
                                for (std::size_t k = 0; k < c; ++k) dst[k] += go[k];
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Normalization, softmax, activations

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  if (eps <= 0) throw ConfigError("layer_norm: eps must be positive");
  require_rank(gamma, 1, "layer_norm", "gamma");
  require_rank(beta, 1, "layer_norm", "beta");
  if (x.rank() == 0 || x.shape().back() != gamma.dim(0) || beta.dim(0) != gamma.dim(0)) {
    throw DimensionError("layer_norm: affine " + to_string(gamma.shape()) + "/" +
                         to_string(beta.shape()) + " does not match last axis of " +
                         to_string(x.shape()));
  }
  const std::size_t c = gamma.dim(0);
  const std::size_t rows = x.numel() / c;
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * c;
    T mu = 0;
    for (std::size_t k = 0; k < c; ++k) mu += xr[k];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t k = 0; k < c; ++k) var += (xr[k] - mu) * (xr[k] - mu);
    var /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
    rstd[r] = rs;
    for (std::size_t k = 0; k < c; ++k) {
      const T xh = (xr[k] - mu) * rs;
      xhat[r * c + k] = xh;
      out[r * c + k] = xh * gv[k] + bv[k];
    }
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [gamma, c, rows, xhat = std::move(xhat), rstd = std::move(rstd)](
          std::span<const T>, std::span<const T> g, std::span<const std::span<T>> gi) {
        auto gv = gamma.values();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * c;
          const T* xh = xhat.data() + r * c;
          if (!gi[1].empty()) {
            for (std::size_t k = 0; k < c; ++k) gi[1][k] += gr[k] * xh[k];
          }
          if (!gi[2].empty()) {
            for (std::size_t k = 0; k < c; ++k) gi[2][k] += gr[k];
          }
          if (!gi[0].empty()) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t k = 0; k < c; ++k) {
              const T d = gr[k] * gv[k];
              mean_d += d;
              mean_dx += d * xh[k];
            }
            mean_d /= static_cast<T>(c);
            mean_dx /= static_cast<T>(c);
            T* gx = gi[0].data() + r * c;
            for (std::size_t k = 0; k < c; ++k) {
              gx[k] += rstd[r] * (gr[k] * gv[k] - mean_d - xh[k] * mean_dx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() == 0) throw DimensionError("softmax: needs rank >= 1");
  const std::size_t l = x.shape().back();
  const std::size_t rows = x.numel() / l;
  auto xv = x.values();
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * l;
    T* o = out.data() + r * l;
    const T mx = *std::max_element(xr, xr + l);
    T total = 0;
    for (std::size_t k = 0; k < l; ++k) {
      o[k] = std::exp(xr[k] - mx);
      total += o[k];
    }
    for (std::size_t k = 0; k < l; ++k) o[k] /= total;
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x},
                        [l, rows](std::span<const T> y, std::span<const T> g,
                                  std::span<const std::span<T>> gi) {
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* yr = y.data() + r * l;
                            const T* gr = g.data() + r * l;
                            T dot = 0;
                            for (std::size_t k = 0; k < l; ++k) dot += gr[k] * yr[k];
                            T* gx = gi[0].data() + r * l;
                            for (std::size_t k = 0; k < l; ++k) gx[k] += yr[k] * (gr[k] - dot);
                          }
                        });
}

Activation parse_activation(std::string_view name) {
  if (name == "gelu") return Activation::kGelu;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "' (expected gelu, relu or sigmoid)");
}

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::kGelu: return "gelu";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
  }
  throw ConfigError("unknown activation kind");
}

namespace {

constexpr double kGeluCubic = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

template <typename T>
T gelu_value(T x) {
  const T inner = static_cast<T>(kSqrt2OverPi) * (x + static_cast<T>(kGeluCubic) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_derivative(T x) {
  const T inner = static_cast<T>(kSqrt2OverPi) * (x + static_cast<T>(kGeluCubic) * x * x * x);
  const T t = std::tanh(inner);
  const T dinner = static_cast<T>(kSqrt2OverPi) * (T(1) + T(3) * static_cast<T>(kGeluCubic) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * dinner;
}

}  // namespace

double gelu_scalar(double x) { return gelu_value(x); }

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  auto xv = x.values();
  std::vector<T> out(xv.size());
  switch (kind) {
    case Activation::kGelu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(xv[i]);
      return make_result<T>("gelu", x.shape(), std::move(out), {x},
                            [x](std::span<const T>, std::span<const T> g,
                                std::span<const std::span<T>> gi) {
                              auto xv = x.values();
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                gi[0][i] += g[i] * gelu_derivative(xv[i]);
                              }
                            });
    case Activation::kRelu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
      return make_result<T>("relu", x.shape(), std::move(out), {x},
                            [](std::span<const T> y, std::span<const T> g,
                               std::span<const std::span<T>> gi) {
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                if (y[i] > T(0)) gi[0][i] += g[i];
                              }
                            });
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = xv[i];
        // Branch keeps exp() from overflowing for large |v|.
        out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
      }
      return make_result<T>("sigmoid", x.shape(), std::move(out), {x},
                            [](std::span<const T> y, std::span<const T> g,
                               std::span<const std::span<T>> gi) {
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                gi[0][i] += g[i] * y[i] * (T(1) - y[i]);
                              }
                            });
  }
  throw ConfigError("unknown activation kind");
}

#define M2UNET_INSTANTIATE(T)                                                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> sum_per_sample(const Tensor<T>&);                                           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                 \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                            const ConvSpec&);                                                    \
  template Tensor<T> transpose_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                      std::size_t);                                              \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);   \
  template Tensor<T> softmax(const Tensor<T>&);                                                  \
  template Tensor<T> activation(const Tensor<T>&, Activation);

M2UNET_INSTANTIATE(float)
M2UNET_INSTANTIATE(double)
#undef M2UNET_INSTANTIATE

}  // namespace m2unet::ops
