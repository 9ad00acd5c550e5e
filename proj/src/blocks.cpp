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

#include "m2unet/blocks.hpp"

#include <cmath>

#include "m2unet/error.hpp"

namespace m2unet::blocks {

namespace {

template <typename T>
NormParams<T> init_norm(ParamStore<T>& store, const std::string& prefix, std::size_t c) {
  return {add_constant<T>(store, prefix + ".gamma", {c}, T(1)),
          add_constant<T>(store, prefix + ".beta", {c}, T(0))};
}

template <typename T>
NormParams<T> norm_params(const ParamStore<T>& store, const std::string& prefix) {
  return {store.at(prefix + ".gamma"), store.at(prefix + ".beta")};
}

template <typename T>
MlpParams<T> init_mlp(ParamStore<T>& store, const std::string& prefix, std::size_t c,
                      std::size_t ratio, std::uint64_t seed) {
  MlpParams<T> p;
  p.norm = init_norm(store, prefix + ".norm", c);
  p.w1 = add_he_uniform<T>(store, prefix + ".w1", {c, ratio * c}, c, seed);
  p.w2 = add_he_uniform<T>(store, prefix + ".w2", {ratio * c, c}, ratio * c, seed);
  return p;
}

template <typename T>
MlpParams<T> mlp_params(const ParamStore<T>& store, const std::string& prefix) {
  return {norm_params(store, prefix + ".norm"), store.at(prefix + ".w1"), store.at(prefix + ".w2")};
}

// Applies a [C_in, C_out] matrix at every spatial position of an N×H×W×C_in
// tensor.
template <typename T>
Tensor<T> pointwise(const Tensor<T>& x, const Tensor<T>& w) {
  const std::size_t c = x.shape().back();
  if (w.rank() != 2 || w.dim(0) != c) {
    throw DimensionError("pointwise: weight " + to_string(w.shape()) + " does not match input " +
                         to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  auto y = ops::matmul(ops::reshape(x, {x.numel() / c, c}), w);
  return ops::reshape(y, std::move(out_shape));
}

template <typename T>
Tensor<T> norm(const Tensor<T>& x, const NormParams<T>& p) {
  return ops::layer_norm(x, p.gamma, p.beta);
}

template <typename T>
void require_channels(const Tensor<T>& x, std::size_t c, const char* block) {
  if (x.rank() != 4 || x.dim(3) != c) {
    throw DimensionError(std::string(block) + ": input " + to_string(x.shape()) + " must be N×H×W×" +
                         std::to_string(c));
  }
}

}  // namespace

template <typename T>
ConvFormerParams<T> init_conv_former(ParamStore<T>& store, const std::string& prefix,
                                     std::size_t channels, std::size_t mixer_ratio,
                                     std::size_t mlp_ratio, std::size_t dw_kernel,
                                     std::uint64_t seed) {
  const std::size_t hidden = mixer_ratio * channels;
  ConvFormerParams<T> p;
  p.norm1 = init_norm(store, prefix + ".norm1", channels);
  p.pw1 = add_he_uniform<T>(store, prefix + ".mixer.pw1", {channels, hidden}, channels, seed);
  p.dw = add_he_uniform<T>(store, prefix + ".mixer.dw", {dw_kernel, dw_kernel, 1, hidden},
                           dw_kernel * dw_kernel, seed);
  p.pw2 = add_he_uniform<T>(store, prefix + ".mixer.pw2", {hidden, channels}, hidden, seed);
  p.mlp = init_mlp(store, prefix + ".mlp", channels, mlp_ratio, seed);
  return p;
}

template <typename T>
TransformerParams<T> init_transformer(ParamStore<T>& store, const std::string& prefix,
                                      std::size_t channels, std::size_t heads,
                                      std::size_t mlp_ratio, std::uint64_t seed) {
  if (heads == 0 || channels % heads != 0) {
    throw ConfigError("transformer: heads " + std::to_string(heads) + " must divide channels " +
                      std::to_string(channels));
  }
  TransformerParams<T> p;
  p.norm1 = init_norm(store, prefix + ".norm1", channels);
  p.wq = add_he_uniform<T>(store, prefix + ".attn.wq", {channels, channels}, channels, seed);
  p.wk = add_he_uniform<T>(store, prefix + ".attn.wk", {channels, channels}, channels, seed);
  p.wv = add_he_uniform<T>(store, prefix + ".attn.wv", {channels, channels}, channels, seed);
  p.wo = add_he_uniform<T>(store, prefix + ".attn.wo", {channels, channels}, channels, seed);
  p.heads = heads;
  p.mlp = init_mlp(store, prefix + ".mlp", channels, mlp_ratio, seed);
  return p;
}

template <typename T>
MUParams<T> init_mu(ParamStore<T>& store, const std::string& prefix, std::size_t in_channels,
                    std::size_t out_channels, std::uint64_t seed) {
  MUParams<T> p;
  p.conv3_w = add_he_uniform<T>(store, prefix + ".conv3.w", {3, 3, in_channels, out_channels},
                                9 * in_channels, seed);
  p.conv3_b = add_constant<T>(store, prefix + ".conv3.b", {out_channels}, T(0));
  p.conv7_w = add_he_uniform<T>(store, prefix + ".conv7.w", {7, 7, in_channels, out_channels},
                                49 * in_channels, seed);
  p.conv7_b = add_constant<T>(store, prefix + ".conv7.b", {out_channels}, T(0));
  return p;
}

template <typename T>
ConvFormerParams<T> conv_former_params(const ParamStore<T>& store, const std::string& prefix) {
  return {norm_params(store, prefix + ".norm1"), store.at(prefix + ".mixer.pw1"),
          store.at(prefix + ".mixer.dw"), store.at(prefix + ".mixer.pw2"),
          mlp_params(store, prefix + ".mlp")};
}

template <typename T>
TransformerParams<T> transformer_params(const ParamStore<T>& store, const std::string& prefix,
                                        std::size_t heads) {
  return {norm_params(store, prefix + ".norm1"), store.at(prefix + ".attn.wq"),
          store.at(prefix + ".attn.wk"),         store.at(prefix + ".attn.wv"),
          store.at(prefix + ".attn.wo"),         heads,
          mlp_params(store, prefix + ".mlp")};
}

template <typename T>
MUParams<T> mu_params(const ParamStore<T>& store, const std::string& prefix) {
  return {store.at(prefix + ".conv3.w"), store.at(prefix + ".conv3.b"),
          store.at(prefix + ".conv7.w"), store.at(prefix + ".conv7.b")};
}

template <typename T>
Tensor<T> channel_mlp(const Tensor<T>& x, const MlpParams<T>& p, ops::Activation act) {
  const std::size_t c = x.shape().back();
  if (p.w1.rank() != 2 || p.w2.rank() != 2 || p.w1.dim(0) != c || p.w2.dim(1) != c ||
      p.w1.dim(1) != p.w2.dim(0)) {
    throw DimensionError("channel_mlp: weights " + to_string(p.w1.shape()) + "/" +
                         to_string(p.w2.shape()) + " do not match input " + to_string(x.shape()));
  }
  auto h = ops::activation(pointwise(norm(x, p.norm), p.w1), act);
  return ops::add(x, pointwise(h, p.w2));
}

template <typename T>
Tensor<T> conv_former_block(const Tensor<T>& x, const ConvFormerParams<T>& p,
                            const BlockActivations& acts) {
  const std::size_t c = p.channels();
  require_channels(x, c, "conv_former_block");
  const std::size_t hidden = p.pw1.dim(1);
  if (p.pw2.rank() != 2 || p.pw2.dim(0) != hidden || p.pw2.dim(1) != c || p.dw.dim(3) != hidden) {
    throw DimensionError("conv_former_block: inconsistent mixer weights");
  }
  auto h = ops::activation(pointwise(norm(x, p.norm1), p.pw1), acts.mixer);
  h = ops::conv2d(h, p.dw, Tensor<T>{}, ops::ConvSpec::same(p.dw.dim(0), hidden));
  auto y = ops::add(x, pointwise(h, p.pw2));
  return channel_mlp(y, p.mlp, acts.mlp);
}

template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const TransformerParams<T>& p) {
  const std::size_t c = p.channels();
  require_channels(x, c, "self_attention");
  if (p.heads == 0 || c % p.heads != 0) {
    throw ConfigError("self_attention: heads " + std::to_string(p.heads) +
                      " must divide channels " + std::to_string(c));
  }
  const std::size_t n = x.dim(0), tokens = x.dim(1) * x.dim(2), heads = p.heads, d = c / heads;
  auto flat = ops::reshape(x, {n * tokens, c});
  // [N·L, C] -> [N·heads, L, d]
  auto split = [&](const Tensor<T>& w) {
    auto t = ops::reshape(ops::matmul(flat, w), {n, tokens, heads, d});
    return ops::reshape(ops::permute(t, {0, 2, 1, 3}), {n * heads, tokens, d});
  };
  auto q = split(p.wq);
  auto k = split(p.wk);
  auto v = split(p.wv);
  auto kt = ops::permute(k, {0, 2, 1});
  auto scores = ops::scale(ops::bmm(q, kt), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  auto attn = ops::softmax(scores);
  auto o = ops::reshape(ops::bmm(attn, v), {n, heads, tokens, d});
  o = ops::reshape(ops::permute(o, {0, 2, 1, 3}), {n * tokens, c});
  return ops::reshape(ops::matmul(o, p.wo), x.shape());
}

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const TransformerParams<T>& p,
                            const BlockActivations& acts) {
  auto y = ops::add(x, self_attention(norm(x, p.norm1), p));
  return channel_mlp(y, p.mlp, acts.mlp);
}

template <typename T>
Tensor<T> mu_block(const Tensor<T>& x_deep, const Tensor<T>& x_shallow, const MUParams<T>& p,
                   ops::Activation merge) {
  if (x_deep.rank() != 4 || x_shallow.rank() != 4 || x_deep.dim(0) != x_shallow.dim(0) ||
      x_shallow.dim(1) != p.scale * x_deep.dim(1) || x_shallow.dim(2) != p.scale * x_deep.dim(2)) {
    throw DimensionError("mu_block: shallow input " + to_string(x_shallow.shape()) +
                         " must be exactly " + std::to_string(p.scale) +
                         "x the spatial size of deep input " + to_string(x_deep.shape()));
  }
  const std::size_t cin = x_deep.dim(3), cout = x_shallow.dim(3);
  if (p.conv3_w.dim(2) != cin || p.conv7_w.dim(2) != cin || p.conv3_w.dim(3) != cout ||
      p.conv7_w.dim(3) != cout) {
    throw DimensionError("mu_block: convolutions " + to_string(p.conv3_w.shape()) + "/" +
                         to_string(p.conv7_w.shape()) + " do not map " + std::to_string(cin) +
                         " to " + std::to_string(cout) + " channels");
  }
  auto up = ops::upsample_nearest(x_deep, p.scale);
  auto m = ops::add(ops::conv2d(up, p.conv3_w, p.conv3_b, ops::ConvSpec::same(3)),
                    ops::conv2d(up, p.conv7_w, p.conv7_b, ops::ConvSpec::same(7)));
  return ops::activation(ops::add(x_shallow, m), merge);
}

#define M2UNET_INSTANTIATE(T)                                                                    \
  template ConvFormerParams<T> init_conv_former(ParamStore<T>&, const std::string&, std::size_t, \
                                                std::size_t, std::size_t, std::size_t,           \
                                                std::uint64_t);                                  \
  template TransformerParams<T> init_transformer(ParamStore<T>&, const std::string&,            \
                                                 std::size_t, std::size_t, std::size_t,          \
                                                 std::uint64_t);                                 \
  template MUParams<T> init_mu(ParamStore<T>&, const std::string&, std::size_t, std::size_t,    \
                               std::uint64_t);                                                   \
  template ConvFormerParams<T> conv_former_params(const ParamStore<T>&, const std::string&);     \
  template TransformerParams<T> transformer_params(const ParamStore<T>&, const std::string&,     \
                                                   std::size_t);                                 \
  template MUParams<T> mu_params(const ParamStore<T>&, const std::string&);                      \
  template Tensor<T> channel_mlp(const Tensor<T>&, const MlpParams<T>&, ops::Activation);        \
  template Tensor<T> conv_former_block(const Tensor<T>&, const ConvFormerParams<T>&,             \
                                       const BlockActivations&);                                 \
  template Tensor<T> self_attention(const Tensor<T>&, const TransformerParams<T>&);              \
  template Tensor<T> transformer_block(const Tensor<T>&, const TransformerParams<T>&,            \
                                       const BlockActivations&);                                 \
  template Tensor<T> mu_block(const Tensor<T>&, const Tensor<T>&, const MUParams<T>&,            \
                              ops::Activation);

M2UNET_INSTANTIATE(float)
M2UNET_INSTANTIATE(double)
#undef M2UNET_INSTANTIATE

}  // namespace m2unet::blocks
