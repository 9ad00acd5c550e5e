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

#include "m2unet/gradsuite.hpp"

#include <cstdio>
#include <functional>
#include <memory>

#include "m2unet/blocks.hpp"
#include "m2unet/error.hpp"
#include "m2unet/gradcheck.hpp"
#include "m2unet/loss.hpp"
#include "m2unet/model.hpp"
#include "m2unet/ops.hpp"
#include "m2unet/random.hpp"

namespace m2unet {
namespace {

using T = Tensor<double>;

T random_leaf(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T(std::move(shape), std::move(v), true);
}

// Scalar root with fixed random weights, so every output element carries a
// distinct sensitivity.
T weighted_sum(const T& y) {
  Rng rng(1234);
  std::vector<double> w(y.numel());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return ops::sum(ops::mul(y, T(y.shape(), std::move(w))));
}

// Built once per seed: the root function plus its named leaves.
struct Problem {
  std::function<T()> fn;
  std::vector<T> leaves;
  std::vector<std::string> names;
  GradCheckOptions options;
};

struct Case {
  std::string name;
  double tolerance;
  std::function<Problem(std::uint64_t seed)> build;
};

GradSuiteResult run_case(const std::string& module, const Case& c, std::size_t seeds) {
  GradSuiteResult out{module, c.name, seeds, 0, 0.0, c.tolerance, ""};
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    Problem p = c.build(seed);
    p.options.seed = seed;
    auto r = check_gradients(p.fn, p.leaves, p.names, p.options);
    out.probes += r.probes;
    if (r.max_rel_error >= out.max_rel_error) {
      out.max_rel_error = r.max_rel_error;
      out.worst = "seed " + std::to_string(seed) + ": " + r.worst;
    }
  }
  return out;
}

Case op_case(std::string name, std::vector<Shape> shapes,
             std::function<T(const std::vector<T>&)> fn) {
  return {std::move(name), 1e-4, [shapes, fn](std::uint64_t seed) {
            Rng rng(mix_seed(seed, 99));
            Problem p;
            for (std::size_t i = 0; i < shapes.size(); ++i) {
              p.leaves.push_back(random_leaf(rng, shapes[i]));
              p.names.push_back("in" + std::to_string(i));
            }
            p.fn = [fn, leaves = p.leaves] { return weighted_sum(fn(leaves)); };
            return p;
          }};
}

std::vector<Case> op_cases() {
  using V = const std::vector<T>&;
  return {
      op_case("add", {{2, 3}, {2, 3}}, [](V l) { return ops::add(l[0], l[1]); }),
      op_case("sub", {{2, 3}, {2, 3}}, [](V l) { return ops::sub(l[0], l[1]); }),
      op_case("mul", {{4, 3}, {4, 3}}, [](V l) { return ops::mul(l[0], l[1]); }),
      op_case("div", {{3, 3}, {3, 3}},
              [](V l) { return ops::div(l[0], ops::add_scalar(ops::mul(l[1], l[1]), 1.0)); }),
      op_case("scale", {{5}}, [](V l) { return ops::scale(l[0], -1.7); }),
      op_case("add_bias", {{2, 2, 3}, {3}}, [](V l) { return ops::add_bias(l[0], l[1]); }),
      op_case("mean", {{3, 4}}, [](V l) { return ops::mul(ops::mean(l[0]), ops::mean(l[0])); }),
      op_case("sum_per_sample", {{3, 2, 2}}, [](V l) { return ops::sum_per_sample(l[0]); }),
      op_case("reshape", {{2, 6}}, [](V l) { return ops::reshape(l[0], {3, 4}); }),
      op_case("permute", {{2, 3, 4}}, [](V l) { return ops::permute(l[0], {2, 0, 1}); }),
      op_case("concat_channels", {{2, 2, 3}, {2, 2, 1}},
              [](V l) { return ops::concat_channels(l[0], l[1]); }),
      op_case("matmul", {{3, 4}, {4, 2}}, [](V l) { return ops::matmul(l[0], l[1]); }),
      op_case("bmm", {{2, 3, 4}, {2, 4, 3}}, [](V l) { return ops::bmm(l[0], l[1]); }),
      op_case("conv2d", {{2, 4, 4, 3}, {3, 3, 3, 2}, {2}},
              [](V l) { return ops::conv2d(l[0], l[1], l[2], ops::ConvSpec::same(3)); }),
      op_case("conv2d_strided", {{1, 4, 4, 2}, {3, 3, 2, 4}, {4}},
              [](V l) { return ops::conv2d(l[0], l[1], l[2], ops::ConvSpec::explicit_pad(3, 2, 1)); }),
      op_case("conv2d_depthwise", {{2, 4, 4, 4}, {3, 3, 1, 4}},
              [](V l) { return ops::conv2d(l[0], l[1], T{}, ops::ConvSpec::same(3, 4)); }),
      op_case("transpose_conv2d", {{2, 2, 2, 3}, {2, 2, 3, 2}, {2}},
              [](V l) { return ops::transpose_conv2d(l[0], l[1], l[2], 2); }),
      op_case("upsample_nearest", {{2, 2, 3, 2}}, [](V l) { return ops::upsample_nearest(l[0], 2); }),
      op_case("layer_norm", {{2, 3, 4}, {4}, {4}},
              [](V l) { return ops::layer_norm(l[0], l[1], l[2]); }),
      op_case("softmax", {{3, 4}}, [](V l) { return ops::softmax(ops::scale(l[0], 3.0)); }),
      op_case("gelu", {{4, 4}}, [](V l) { return ops::gelu(ops::scale(l[0], 3.0)); }),
      op_case("relu", {{4, 4}}, [](V l) { return ops::relu(l[0]); }),
      op_case("sigmoid", {{4, 4}}, [](V l) { return ops::sigmoid(ops::scale(l[0], 4.0)); }),
  };
}

// Every parameter, norms included, is drawn at random so the check runs at a
// generic point rather than at initialization.
void randomize(ParamStore<double>& store, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : store) {
    for (auto& v : t.mutable_values()) v = rng.uniform(-0.8, 0.8);
  }
}

template <typename Init, typename Forward>
Case block_case(std::string name, std::vector<Shape> inputs, Init init, Forward forward) {
  return {std::move(name), 1e-4, [inputs, init, forward](std::uint64_t seed) {
            auto store = std::make_shared<ParamStore<double>>();
            auto params = init(*store);
            randomize(*store, seed + 100);
            Rng rng(seed);
            Problem p;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
              p.leaves.push_back(random_leaf(rng, inputs[i]));
              p.names.push_back("x" + std::to_string(i));
            }
            for (auto& [pname, t] : *store) {
              p.leaves.push_back(t);
              p.names.push_back(pname);
            }
            p.fn = [store, params, forward, x = p.leaves] { return weighted_sum(forward(x, params)); };
            p.options.max_probes_per_leaf = 12;
            return p;
          }};
}

Case conv_former_case() {
  return block_case(
      "conv_former_block", {{2, 4, 4, 4}},
      [](ParamStore<double>& s) { return blocks::init_conv_former<double>(s, "cf", 4, 2, 4, 7, 1); },
      [](const std::vector<T>& x, const auto& p) { return blocks::conv_former_block(x[0], p); });
}

Case transformer_case() {
  return block_case(
      "transformer_block", {{2, 2, 3, 4}},
      [](ParamStore<double>& s) { return blocks::init_transformer<double>(s, "t", 4, 2, 4, 1); },
      [](const std::vector<T>& x, const auto& p) { return blocks::transformer_block(x[0], p); });
}

Case mu_case() {
  return block_case(
      "mu_block", {{2, 1, 1, 3}, {2, 4, 4, 2}},
      [](ParamStore<double>& s) { return blocks::init_mu<double>(s, "mu", 3, 2, 1); },
      [](const std::vector<T>& x, const auto& p) { return blocks::mu_block(x[0], x[1], p); });
}

Case jaccard_case() {
  return {"jaccard_loss", 1e-4, [](std::uint64_t seed) {
            Rng rng(seed);
            std::vector<double> y(16);
            for (auto& v : y) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
            Problem p;
            p.leaves.push_back(random_leaf(rng, {2, 2, 4, 1}, 0.0, 1.0));
            p.names.push_back("yhat");
            p.fn = [target = T({2, 2, 4, 1}, std::move(y)), yhat = p.leaves[0]] {
              return ops::add(jaccard_loss(target, yhat), batch_jaccard_loss(target, yhat));
            };
            return p;
          }};
}

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.image_width = c.image_height = 32;
  c.filters = {4, 4, 8, 8};
  c.depths = {1, 1, 1, 1};
  c.heads = {1, 1, 2, 2};
  c.head_channels = 4;
  return c;
}

Case model_case() {
  return {"tiny_model", 1e-3, [](std::uint64_t seed) {
            auto cfg = gradcheck_model_config();
            // Cover the plain-upsampling decoder links as well.
            if (seed % 3 == 1) cfg = ModelConfig::for_ablation(Ablation::kPlusTwoUpsampling, cfg);
            auto m = std::make_shared<Model<double>>(build_model<double>(cfg, seed));
            Rng rng(seed + 100);
            // Fresh biases are exactly zero and put ReLU inputs on the kink
            // wherever a feature map vanishes; probe at a generic point.
            for (auto& [name, t] : m->params) {
              const bool shift = name.ends_with(".b") || name.ends_with(".beta");
              const bool gamma = name.ends_with(".gamma");
              if (!shift && !gamma) continue;
              for (auto& v : t.mutable_values()) v = rng.uniform(-0.5, 0.5) + (gamma ? 1.0 : 0.0);
            }
            auto x = random_leaf(rng, {1, 32, 32, 3});
            auto w = random_leaf(rng, {1, 32, 32, 1});
            Problem p;
            for (const auto& [name, t] : m->params) {
              p.leaves.push_back(t);
              p.names.push_back(name);
            }
            p.fn = [m, x = x.detach(), w = w.detach()] {
              return ops::sum(ops::mul(m2unet_forward(x, *m), w));
            };
            // ReLU kinks are dense at full resolution; a small step makes a
            // probe straddling one correspondingly unlikely.
            p.options.step = 1e-6;
            p.options.max_probes_per_leaf = 6;
            p.options.max_total_probes = 240;
            return p;
          }};
}

std::vector<Case> cases_for(const std::string& module) {
  if (module == "ops") return op_cases();
  if (module == "conv_former") return {conv_former_case()};
  if (module == "transformer") return {transformer_case()};
  if (module == "mu") return {mu_case()};
  if (module == "jaccard_loss") return {jaccard_case()};
  if (module == "model") return {model_case()};
  throw UsageError("unknown gradcheck module '" + module + "'");
}

}  // namespace

const std::vector<std::string>& grad_suite_modules() {
  static const std::vector<std::string> kModules = {"ops", "conv_former", "transformer",
                                                    "mu",  "jaccard_loss", "model"};
  return kModules;
}

std::vector<GradSuiteResult> run_grad_suite(const std::string& module, std::size_t seeds) {
  if (seeds == 0) throw UsageError("gradient suite needs at least one seed");
  std::vector<std::string> modules = module.empty() ? grad_suite_modules()
                                                    : std::vector<std::string>{module};
  std::vector<GradSuiteResult> out;
  for (const auto& m : modules) {
    for (const auto& c : cases_for(m)) out.push_back(run_case(m, c, seeds));
  }
  return out;
}

std::string grad_suite_tsv(const std::vector<GradSuiteResult>& results) {
  std::string out = "module\tcase\tseeds\tprobes\tmax_rel_error\ttolerance\tstatus\n";
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%s\t%s\t%zu\t%zu\t%.3e\t%.0e\t%s\n", r.module.c_str(),
                  r.name.c_str(), r.seeds, r.probes, r.max_rel_error, r.tolerance,
                  r.passed() ? "ok" : "FAIL");
    out += buf;
  }
  return out;
}

}  // namespace m2unet
