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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "m2unet/blocks.hpp"
#include "m2unet/data.hpp"
#include "m2unet/error.hpp"
#include "m2unet/gradsuite.hpp"
#include "m2unet/loss.hpp"
#include "m2unet/model.hpp"
#include "m2unet/ops.hpp"
#include "m2unet/random.hpp"
#include "m2unet/trainer.hpp"

namespace {

using namespace m2unet;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <typename T>
bool same_bits(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] != bv[i]) return false;
  }
  return true;
}

Tensor<float> random_input(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor<float>(std::move(shape), std::move(v));
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// 1. Finite-difference gradient suite.
Outcome gradients() {
  const auto start = Clock::now();
  auto results = run_grad_suite("", 20);
  const double secs = seconds_since(start);
  double worst_op = 0, worst_model = 0;
  std::string failed;
  for (const auto& r : results) {
    (r.module == "model" ? worst_model : worst_op) =
        std::max(r.module == "model" ? worst_model : worst_op, r.max_rel_error);
    if (!r.passed() || r.seeds < 20) failed += " " + r.module + "/" + r.name;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu cases x 20 seeds, max rel err %.2e (ops/blocks/loss) %.2e (model), %.1fs",
                results.size(), worst_op, worst_model, secs);
  return {failed.empty() && secs < 120.0, buf + (failed.empty() ? "" : "; failed:" + failed)};
}

// 2. Encoder/decoder/head shapes at the default widths.
Outcome shape_law() {
  NoGradGuard no_grad;
  ModelConfig base;
  base.image_width = base.image_height = 64;
  auto reference = build_model<float>(base, 5);
  Rng rng(2024);
  std::string error;
  for (int trial = 0; trial < 50 && error.empty(); ++trial) {
    const std::size_t w = 32 * (1 + rng.below(5)), h = 32 * (1 + rng.below(5));
    ModelConfig cfg = base;
    cfg.image_width = w;
    cfg.image_height = h;
    Model<float> m{cfg, reference.params};
    auto x = random_input(rng, {1, h, w, 3});
    auto pyramid = encoder_forward(x, m);
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t div = std::size_t{4} << i;
      const Shape want{1, h / div, w / div, cfg.filters[i]};
      if (pyramid[i].shape() != want) {
        error = "X" + std::to_string(i + 1) + " " + shape_str(pyramid[i].shape()) + " != " + shape_str(want);
      }
    }
    auto dec = decoder_forward(pyramid, m);
    if (dec.shape() != Shape{1, h, w, 64}) error = "decoder " + shape_str(dec.shape());
    auto y = m2unet_forward(x, m);
    if (y.shape() != Shape{1, h, w, 1}) error = "head " + shape_str(y.shape());
    if (!error.empty()) error += " at W=" + std::to_string(w) + " H=" + std::to_string(h);
  }
  return {error.empty(), error.empty() ? "50 sizes in 32..160, filters 64,128,320,512, decoder 64, head 1" : error};
}

template <typename T>
void fill_random(ParamStore<T>& store, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : store) {
    for (auto& v : t.mutable_values()) v = static_cast<T>(rng.uniform(-0.8, 0.8));
  }
}

template <typename T>
void zero(Tensor<T> t) {
  for (auto& v : t.mutable_values()) v = T(0);
}

// 3. Zeroed output projections make each block the identity.
Outcome residual_identity() {
  ParamStore<float> store;
  auto cf = blocks::init_conv_former<float>(store, "cf", 8, 2, 4, 7, 1);
  auto tr = blocks::init_transformer<float>(store, "tr", 8, 2, 4, 2);
  auto mu = blocks::init_mu<float>(store, "mu", 6, 8, 3);
  fill_random(store, 17);
  zero(cf.pw2);
  zero(cf.mlp.w2);
  zero(tr.wo);
  zero(tr.mlp.w2);
  for (auto t : {mu.conv3_w, mu.conv3_b, mu.conv7_w, mu.conv7_b}) zero(t);
  Rng rng(33);
  int exact = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6), n = 1 + rng.below(2);
    auto x = random_input(rng, {n, h, w, 8}, -3.0, 3.0);
    exact += same_bits(blocks::conv_former_block(x, cf), x);
    exact += same_bits(blocks::transformer_block(x, tr), x);
    // The merge gate is a ReLU, so identity holds for non-negative features.
    auto deep = random_input(rng, {n, h, w, 6});
    auto shallow = random_input(rng, {n, 4 * h, 4 * w, 8}, 0.0, 3.0);
    exact += same_bits(blocks::mu_block(deep, shallow, mu), shallow);
  }
  return {exact == 60, std::to_string(exact) + "/60 bitwise identities (ConvFormer, Transformer, MU) at f32"};
}

// 4. Loss and metric oracles.
Outcome loss_metrics() {
  std::string error;
  auto t = [](Shape s, std::vector<double> v) { return Tensor<double>(std::move(s), std::move(v)); };
  const double perfect = jaccard_loss(t({4}, {1, 0, 1, 1}), t({4}, {1, 0, 1, 1})).item();
  const double hand = jaccard_loss(t({1}, {1}), t({1}, {0}), 0.7).item();
  if (perfect != 0.0) error += " perfect=" + std::to_string(perfect);
  if (std::abs(hand - 0.4117647) > 1e-6) error += " hand=" + std::to_string(hand);

  Rng rng(404);
  double worst_count = 0, worst_ratio = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = (1 + rng.below(16)) * (1 + rng.below(16));
    const double py = rng.uniform(), pp = rng.uniform();
    std::vector<std::uint8_t> y(n), p(n);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < n; ++k) {
      y[k] = rng.bernoulli(py);
      p[k] = rng.bernoulli(pp);
      tp += y[k] && p[k];
      fp += !y[k] && p[k];
      fn += y[k] && !p[k];
    }
    const bool empty = tp + fp + fn == 0;
    const double d_ref = empty ? 1.0 : 2.0 * tp / (2.0 * tp + fp + fn);
    const double j_ref = empty ? 1.0 : double(tp) / (tp + fp + fn);
    const double d = dice(y, p), j = iou(y, p);
    worst_count = std::max({worst_count, std::abs(d - d_ref), std::abs(j - j_ref)});
    worst_ratio = std::max(worst_ratio, std::abs(j - d / (2.0 - d)));
  }
  if (worst_count > 1e-12) error += " count diff " + std::to_string(worst_count);
  if (worst_ratio > 1e-9) error += " iou/dice diff " + std::to_string(worst_ratio);
  char buf[200];
  std::snprintf(buf, sizeof buf, "loss(perfect)=%g loss(1,0)=%.7f; 100 mask pairs: count diff %.1e, iou-dice/(2-dice) %.1e",
                perfect, hand, worst_count, worst_ratio);
  return {error.empty(), error.empty() ? buf : buf + std::string(";") + error};
}

// 5. The tiny model overfits eight synthetic samples.
Outcome overfit() {
  const auto start = Clock::now();
  RunConfig cfg;
  cfg.model = ModelConfig::tiny();
  cfg.train.target_size = 64;
  cfg.train.synth_count = 8;
  cfg.train.batch_size = 8;
  cfg.train.epochs = 500;  // one step per epoch
  cfg.train.lr_max = 1e-3;
  cfg.train.lr_min = 0.0;
  cfg.train.seed = 0;
  cfg.aug.enabled = false;
  auto data = load_training_data(cfg);
  Trainer trainer(cfg, data);
  double best = 0;
  std::size_t reached = 0;
  while (!trainer.finished()) {
    trainer.step();
    if (trainer.global_step() % 25 != 0) continue;
    best = evaluate(trainer.model(), data).m_dice;
    if (best >= 0.95) {
      reached = trainer.global_step();
      break;
    }
  }
  const double secs = seconds_since(start);
  char buf[200];
  std::snprintf(buf, sizeof buf, "mean dice %.4f after %zu steps (limit 500), %.1fs", best,
                trainer.global_step(), secs);
  return {reached != 0 && secs < 600.0, buf};
}

// 6. Ablation rows build, train one step, and order by parameter count.
Outcome ablations() {
  std::vector<std::size_t> counts;
  std::string detail;
  for (Ablation row : kAllAblations) {
    ModelConfig cfg = ModelConfig::for_ablation(row, ModelConfig{});
    cfg.image_width = cfg.image_height = 64;
    auto m = build_model<float>(cfg, 1);
    const std::vector<std::size_t> first{0};
    auto batch = make_batch(synth_polyp_dataset(1, 64, 2), first);
    auto loss = batch_jaccard_loss(batch.second, m2unet_forward(batch.first, m));
    auto grads = backward(loss);
    for (const auto& [name, p] : m.params) {
      if (!grads.contains(p)) return {false, std::string(ablation_name(row)) + ": no gradient for " + name};
    }
    counts.push_back(m.params.count());
    detail += std::string(detail.empty() ? "" : ", ") + std::string(ablation_name(row)) + "=" + std::to_string(counts.back());
  }
  // kAllAblations: baseline, +1 up, +1 mu, +2 up, +2 mu.
  const std::size_t base = counts[0], up1 = counts[1], mu1 = counts[2], up2 = counts[3], mu2 = counts[4];
  const bool ordered = base <= up1 && up1 <= up2 && std::max(up1, up2) <= std::min(mu1, mu2) && mu1 <= mu2;
  return {ordered, detail};
}

// 7. Fixed-seed training is reproducible and resumable.
Outcome determinism() {
  RunConfig cfg;
  cfg.model = ModelConfig::tiny();
  cfg.train.target_size = 64;
  cfg.train.synth_count = 6;
  cfg.train.batch_size = 4;
  cfg.train.epochs = 20;
  cfg.train.seed = 7;
  cfg.aug.enabled = true;
  auto data = load_training_data(cfg);
  auto run = [&](Trainer& t, int n) {
    std::vector<double> losses;
    for (int i = 0; i < n; ++i) losses.push_back(t.step());
    return losses;
  };
  Trainer a(cfg, data), b(cfg, data);
  const auto la = run(a, 10), lb = run(b, 10);
  const auto lc = run(a, 10);  // steps 11-20 of the uninterrupted run

  const auto path = (std::filesystem::temp_directory_path() / "m2unet_acceptance.ckpt").string();
  b.checkpoint().save(path);
  Trainer resumed(Checkpoint::load(path), data);
  const auto lr = run(resumed, 10);
  std::filesystem::remove(path);
  const bool same_runs = la == lb, same_resume = lc == lr;
  return {same_runs && same_resume,
          std::string("two 10-step runs ") + (same_runs ? "identical" : "DIFFER") +
              "; resumed steps 11-20 " + (same_resume ? "identical" : "DIFFER")};
}

// 8. Golden ingestion.
Outcome ingestion() {
  auto fixture = [](const std::string& n) { return std::string(M2UNET_FIXTURE_DIR) + "/" + n; };
  auto golden = [&](const std::string& n) {
    std::ifstream in(fixture(n));
    if (!in) throw UsageError("missing fixture " + n);
    return read_tensor_text<float>(in);
  };
  std::string error;
  for (auto [name, target] : {std::pair<std::string, std::size_t>{"up", 64}, {"down", 32}}) {
    auto s = preprocess(read_pnm(fixture(name + ".ppm")), read_pnm(fixture(name + ".pgm")), target);
    const std::string stem = name + "_" + std::to_string(target);
    if (!same_bits(s.image, golden(stem + ".image.txt"))) error += " " + stem + ".image";
    if (!same_bits(s.mask, golden(stem + ".mask.txt"))) error += " " + stem + ".mask";
  }
  auto e = preprocess(read_pnm(fixture("endpoints.ppm")), read_pnm(fixture("endpoints.pgm")), 32);
  if (!same_bits(e.image, golden("endpoints_32.image.txt"))) error += " endpoints";
  if (e.image.at({0, 0, 0}) != -1.0f || e.image.at({31, 31, 2}) != 1.0f) error += " endpoint values";
  return {error.empty(), error.empty() ? "up 45x37->64, down 90x100->32 bit-exact; 0->-1, 255->+1"
                                       : "mismatch:" + error};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradients},      {"shape law", shape_law},
      {"residual identity", residual_identity}, {"loss/metric oracles", loss_metrics},
      {"overfit smoke test", overfit},    {"ablation plumbing", ablations},
      {"determinism & persistence", determinism}, {"ingestion", ingestion},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
