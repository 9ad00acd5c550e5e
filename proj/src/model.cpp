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

#include "m2unet/model.hpp"

#include "m2unet/error.hpp"
#include "m2unet/ops.hpp"

namespace m2unet {

namespace {

std::string_view stage_kind_name(StageKind k) { return k == StageKind::kConv ? "conv" : "attn"; }

StageKind parse_stage_kind(const std::string& s) {
  if (s == "conv") return StageKind::kConv;
  if (s == "attn") return StageKind::kAttention;
  throw ConfigError("unknown stage kind '" + s + "' (expected conv or attn)");
}

std::string_view mu_mode_name(MuMode m) {
  switch (m) {
    case MuMode::kNone: return "none";
    case MuMode::kPlainUpsample: return "plain_upsample";
    case MuMode::kMu: return "mu";
  }
  return "?";
}

MuMode parse_mu_mode(const std::string& s) {
  if (s == "none") return MuMode::kNone;
  if (s == "plain_upsample") return MuMode::kPlainUpsample;
  if (s == "mu") return MuMode::kMu;
  throw ConfigError("unknown mu_mode '" + s + "' (expected none, plain_upsample or mu)");
}

std::array<std::size_t, 4> four(const std::vector<std::size_t>& v, const char* key) {
  if (v.size() != 4) {
    throw ConfigError(std::string(key) + " needs exactly 4 entries, got " +
                      std::to_string(v.size()));
  }
  return {v[0], v[1], v[2], v[3]};
}

std::vector<std::size_t> vec(const std::array<std::size_t, 4>& a) { return {a.begin(), a.end()}; }

std::string stage_prefix(std::size_t stage, std::size_t block) {
  return "encoder.stage" + std::to_string(stage + 1) + ".block" + std::to_string(block);
}

// Channels produced by decoder step k (0-based).
std::size_t step_channels(const ModelConfig& c, std::size_t k) {
  switch (k) {
    case 0: return c.filters[2];
    case 1: return c.filters[1];
    case 2: return c.filters[0];
    default: return c.head_channels;
  }
}

// Channels entering decoder step k.
std::size_t step_input_channels(const ModelConfig& c, std::size_t k) {
  return k == 0 ? c.filters[3] : step_channels(c, k - 1);
}

bool step_has_skip(std::size_t k) { return k < 3; }

std::string step_prefix(std::size_t k) { return "decoder.s" + std::to_string(k + 1); }

constexpr std::size_t kDecoderSteps = 5;
constexpr std::size_t kMuScale = 4;

template <typename T>
void add_conv(ParamStore<T>& store, const std::string& prefix, std::size_t k, std::size_t cin,
              std::size_t cout, std::uint64_t seed) {
  add_he_uniform<T>(store, prefix + ".w", {k, k, cin, cout}, k * k * cin, seed);
  add_constant<T>(store, prefix + ".b", {cout}, T(0));
}

template <typename T>
Tensor<T> conv(const Tensor<T>& x, const ParamStore<T>& store, const std::string& prefix,
               const ops::ConvSpec& spec) {
  return ops::conv2d(x, store.at(prefix + ".w"), store.at(prefix + ".b"), spec);
}

// Cross link: merge(shallow + f(up×4(deep))).
template <typename T>
Tensor<T> cross_link(const Tensor<T>& deep, const Tensor<T>& shallow, const Model<T>& m,
                     const std::string& prefix) {
  const auto merge = m.config.activations.merge;
  if (m.config.mu_mode == MuMode::kMu) {
    return blocks::mu_block(deep, shallow, blocks::mu_params(m.params, prefix), merge);
  }
  auto up = ops::upsample_nearest(deep, kMuScale);
  if (up.shape() != Shape{shallow.dim(0), shallow.dim(1), shallow.dim(2), deep.dim(3)}) {
    throw DimensionError("cross link " + prefix + ": " + to_string(deep.shape()) +
                         " does not upsample onto " + to_string(shallow.shape()));
  }
  auto proj = conv(up, m.params, prefix + ".proj", ops::ConvSpec::same(1));
  return ops::activation(ops::add(shallow, proj), merge);
}

}  // namespace

std::string_view ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kBaseline: return "baseline";
    case Ablation::kPlusOneUpsampling: return "+1 upsampling";
    case Ablation::kPlusOneMu: return "+1 mu";
    case Ablation::kPlusTwoUpsampling: return "+2 upsampling";
    case Ablation::kPlusTwoMu: return "+2 mu";
  }
  return "?";
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (image_width == 0 || image_height == 0 || image_width % 32 != 0 || image_height % 32 != 0) {
    fail("image size " + std::to_string(image_width) + "x" + std::to_string(image_height) +
         " must be positive and divisible by 32");
  }
  if (in_channels == 0) fail("in_channels must be positive");
  for (std::size_t i = 0; i < 4; ++i) {
    if (filters[i] == 0) fail("filters must be positive");
    if (i > 0 && filters[i] < filters[i - 1]) {
      fail("filters must be non-decreasing, got " + join_sizes(vec(filters)));
    }
    if (depths[i] == 0) fail("stage depths must be at least 1");
    if (kinds[i] == StageKind::kAttention && (heads[i] == 0 || filters[i] % heads[i] != 0)) {
      fail("stage " + std::to_string(i + 1) + " heads " + std::to_string(heads[i]) +
           " must divide " + std::to_string(filters[i]) + " channels");
    }
  }
  if (mu_count > 2) fail("mu_count must be 0, 1 or 2");
  if ((mu_mode == MuMode::kNone) != (mu_count == 0)) {
    fail("mu_mode none requires mu_count 0 and vice versa");
  }
  if (head_channels == 0) fail("head_channels must be positive");
  if (mixer_ratio == 0 || mlp_ratio == 0) fail("expansion ratios must be positive");
  if (dw_kernel % 2 == 0) fail("dw_kernel must be odd");
}

void ModelConfig::write(KeyValueConfig& out) const {
  out.set("model.image_width", std::to_string(image_width));
  out.set("model.image_height", std::to_string(image_height));
  out.set("model.in_channels", std::to_string(in_channels));
  out.set("model.filters", join_sizes(vec(filters)));
  out.set("model.depths", join_sizes(vec(depths)));
  std::string k;
  for (std::size_t i = 0; i < 4; ++i) k += (i ? "," : "") + std::string(stage_kind_name(kinds[i]));
  out.set("model.stage_kinds", k);
  out.set("model.heads", join_sizes(vec(heads)));
  out.set("model.mu_mode", std::string(mu_mode_name(mu_mode)));
  out.set("model.mu_count", std::to_string(mu_count));
  out.set("model.head_channels", std::to_string(head_channels));
  out.set("model.mixer_ratio", std::to_string(mixer_ratio));
  out.set("model.mlp_ratio", std::to_string(mlp_ratio));
  out.set("model.dw_kernel", std::to_string(dw_kernel));
  out.set("model.act_mixer", std::string(ops::activation_name(activations.mixer)));
  out.set("model.act_mlp", std::string(ops::activation_name(activations.mlp)));
  out.set("model.act_merge", std::string(ops::activation_name(activations.merge)));
}

ModelConfig ModelConfig::read(const KeyValueConfig& in) {
  ModelConfig c;
  if (in.has("model.image_size")) {
    c.image_width = c.image_height = in.get_size("model.image_size", c.image_width);
  }
  c.image_width = in.get_size("model.image_width", c.image_width);
  c.image_height = in.get_size("model.image_height", c.image_height);
  c.in_channels = in.get_size("model.in_channels", c.in_channels);
  c.filters = four(in.get_sizes("model.filters", vec(c.filters)), "model.filters");
  c.depths = four(in.get_sizes("model.depths", vec(c.depths)), "model.depths");
  if (in.has("model.stage_kinds")) {
    auto names = in.get_strings("model.stage_kinds", {});
    if (names.size() != 4) throw ConfigError("model.stage_kinds needs exactly 4 entries");
    for (std::size_t i = 0; i < 4; ++i) c.kinds[i] = parse_stage_kind(names[i]);
  }
  c.heads = four(in.get_sizes("model.heads", vec(c.heads)), "model.heads");
  c.mu_mode = parse_mu_mode(in.get_string("model.mu_mode", std::string(mu_mode_name(c.mu_mode))));
  if (in.has("model.mu_count")) {
    c.mu_count = in.get_size("model.mu_count", c.mu_count);
    if (c.mu_count == 0 && !in.has("model.mu_mode")) c.mu_mode = MuMode::kNone;
  } else if (c.mu_mode == MuMode::kNone) {
    c.mu_count = 0;
  }
  c.head_channels = in.get_size("model.head_channels", c.head_channels);
  c.mixer_ratio = in.get_size("model.mixer_ratio", c.mixer_ratio);
  c.mlp_ratio = in.get_size("model.mlp_ratio", c.mlp_ratio);
  c.dw_kernel = in.get_size("model.dw_kernel", c.dw_kernel);
  auto act = [&](const char* key, ops::Activation fallback) {
    return ops::parse_activation(in.get_string(key, std::string(ops::activation_name(fallback))));
  };
  c.activations.mixer = act("model.act_mixer", c.activations.mixer);
  c.activations.mlp = act("model.act_mlp", c.activations.mlp);
  c.activations.merge = act("model.act_merge", c.activations.merge);
  c.validate();
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.image_width = c.image_height = 64;
  c.filters = {8, 16, 24, 32};
  c.depths = {1, 1, 1, 1};
  c.heads = {1, 1, 2, 4};
  c.head_channels = 8;
  return c;
}

ModelConfig ModelConfig::for_ablation(Ablation row, ModelConfig base) {
  switch (row) {
    case Ablation::kBaseline: base.mu_mode = MuMode::kNone; base.mu_count = 0; break;
    case Ablation::kPlusOneUpsampling: base.mu_mode = MuMode::kPlainUpsample; base.mu_count = 1; break;
    case Ablation::kPlusTwoUpsampling: base.mu_mode = MuMode::kPlainUpsample; base.mu_count = 2; break;
    case Ablation::kPlusOneMu: base.mu_mode = MuMode::kMu; base.mu_count = 1; break;
    case Ablation::kPlusTwoMu: base.mu_mode = MuMode::kMu; base.mu_count = 2; break;
  }
  return base;
}

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model<T> m{cfg, {}};
  auto& s = m.params;
  const auto& f = cfg.filters;

  add_conv(s, "encoder.stem", 7, cfg.in_channels, f[0], seed);
  for (std::size_t i = 0; i < 4; ++i) {
    if (i > 0) add_conv(s, "encoder.down" + std::to_string(i + 1), 3, f[i - 1], f[i], seed);
    for (std::size_t j = 0; j < cfg.depths[i]; ++j) {
      if (cfg.kinds[i] == StageKind::kConv) {
        blocks::init_conv_former(s, stage_prefix(i, j), f[i], cfg.mixer_ratio, cfg.mlp_ratio,
                                 cfg.dw_kernel, seed);
      } else {
        blocks::init_transformer(s, stage_prefix(i, j), f[i], cfg.heads[i], cfg.mlp_ratio, seed);
      }
    }
  }

  for (std::size_t k = 0; k < kDecoderSteps; ++k) {
    const std::size_t cin = step_input_channels(cfg, k), cout = step_channels(cfg, k);
    const auto p = step_prefix(k);
    // Each output pixel of a k=s transpose conv sees exactly cin inputs.
    add_he_uniform<T>(s, p + ".up.w", {2, 2, cin, cout}, cin, seed);
    add_constant<T>(s, p + ".up.b", {cout}, T(0));
    const std::size_t skip = step_has_skip(k) ? f[2 - k] : 0;
    add_conv(s, p + ".fuse", 3, cout + skip, cout, seed);
  }

  // Link A: s1 -> s3, link B: s2 -> s4.
  for (std::size_t link = 0; link < cfg.mu_count; ++link) {
    const std::string prefix = link == 0 ? "decoder.mu_a" : "decoder.mu_b";
    const std::size_t cin = step_channels(cfg, link), cout = step_channels(cfg, link + 2);
    if (cfg.mu_mode == MuMode::kMu) {
      blocks::init_mu(s, prefix, cin, cout, seed);
    } else {
      add_conv(s, prefix + ".proj", 1, cin, cout, seed);
    }
  }

  add_conv(s, "head", 1, cfg.head_channels, 1, seed);
  return m;
}

template <typename T>
FeaturePyramid<T> encoder_forward(const Tensor<T>& x, const Model<T>& model) {
  const auto& cfg = model.config;
  if (x.rank() != 4 || x.dim(1) != cfg.image_height || x.dim(2) != cfg.image_width ||
      x.dim(3) != cfg.in_channels) {
    throw DimensionError("encoder_forward: input " + to_string(x.shape()) + " does not match N×" +
                         std::to_string(cfg.image_height) + "×" + std::to_string(cfg.image_width) +
                         "×" + std::to_string(cfg.in_channels));
  }
  FeaturePyramid<T> pyr;
  auto h = conv(x, model.params, "encoder.stem", ops::ConvSpec::explicit_pad(7, 4, 2));
  for (std::size_t i = 0; i < 4; ++i) {
    if (i > 0) {
      h = conv(h, model.params, "encoder.down" + std::to_string(i + 1),
               ops::ConvSpec::explicit_pad(3, 2, 1));
    }
    for (std::size_t j = 0; j < cfg.depths[i]; ++j) {
      if (cfg.kinds[i] == StageKind::kConv) {
        h = blocks::conv_former_block(
            h, blocks::conv_former_params(model.params, stage_prefix(i, j)), cfg.activations);
      } else {
        h = blocks::transformer_block(
            h, blocks::transformer_params(model.params, stage_prefix(i, j), cfg.heads[i]),
            cfg.activations);
      }
    }
    pyr.levels[i] = h;
  }
  return pyr;
}

template <typename T>
Tensor<T> decoder_forward(const FeaturePyramid<T>& pyr, const Model<T>& model) {
  const auto& cfg = model.config;
  const std::size_t n = pyr[0].defined() && pyr[0].rank() == 4 ? pyr[0].dim(0) : 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t div = std::size_t{4} << i;
    const Shape want{n, cfg.image_height / div, cfg.image_width / div, cfg.filters[i]};
    if (!pyr[i].defined() || pyr[i].shape() != want) {
      throw DimensionError("decoder_forward: level " + std::to_string(i + 1) + " is " +
                           (pyr[i].defined() ? to_string(pyr[i].shape()) : "undefined") +
                           ", expected " + to_string(want));
    }
  }
  std::array<Tensor<T>, kDecoderSteps> out;
  Tensor<T> h = pyr[3];
  for (std::size_t k = 0; k < kDecoderSteps; ++k) {
    const auto p = step_prefix(k);
    h = ops::transpose_conv2d(h, model.params.at(p + ".up.w"), model.params.at(p + ".up.b"), 2);
    if (step_has_skip(k)) h = ops::concat_channels(h, pyr[2 - k]);
    h = ops::relu(conv(h, model.params, p + ".fuse", ops::ConvSpec::same(3)));
    if (k == 2 && cfg.mu_count >= 1) h = cross_link(out[0], h, model, "decoder.mu_a");
    if (k == 3 && cfg.mu_count >= 2) h = cross_link(out[1], h, model, "decoder.mu_b");
    out[k] = h;
  }
  return h;
}

template <typename T>
Tensor<T> m2unet_forward(const Tensor<T>& x, const Model<T>& model) {
  auto d = decoder_forward(encoder_forward(x, model), model);
  return ops::sigmoid(conv(d, model.params, "head", ops::ConvSpec::same(1)));
}

#define M2UNET_INSTANTIATE(T)                                                             \
  template Model<T> build_model<T>(const ModelConfig&, std::uint64_t);                    \
  template FeaturePyramid<T> encoder_forward(const Tensor<T>&, const Model<T>&);          \
  template Tensor<T> decoder_forward(const FeaturePyramid<T>&, const Model<T>&);          \
  template Tensor<T> m2unet_forward(const Tensor<T>&, const Model<T>&);

M2UNET_INSTANTIATE(float)
M2UNET_INSTANTIATE(double)
#undef M2UNET_INSTANTIATE

}  // namespace m2unet
