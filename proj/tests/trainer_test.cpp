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

#include "m2unet/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "m2unet/error.hpp"
#include "m2unet/ops.hpp"
#include "test_util.hpp"

namespace m2unet {
namespace {

using testing::bitwise_equal;

RunConfig small_run(bool augment = true) {
  RunConfig c;
  c.model = ModelConfig::tiny();
  c.model.image_width = c.model.image_height = 32;
  c.train.target_size = 32;
  c.train.batch_size = 3;
  c.train.synth_count = 5;
  c.train.epochs = 10;
  c.train.lr_max = 1e-3;
  c.train.seed = 11;
  c.aug.enabled = augment;
  return c;
}

TEST(CosineLrTest, HandValues) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-3, 1e-5), 1e-3);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5, 1e-18);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3, 1e-5), (1e-3 + 1e-5) / 2, 1e-15);
  for (std::size_t s = 0; s <= 10; ++s) EXPECT_EQ(cosine_lr(s, 10, 2e-4, 2e-4), 2e-4);
  EXPECT_THROW(cosine_lr(11, 10, 1e-3, 0), UsageError);
  EXPECT_THROW(cosine_lr(0, 0, 1e-3, 0), UsageError);
  EXPECT_THROW(cosine_lr(0, 10, 1e-3, 1e-2), UsageError);
}

ParamStore<double> one_param(std::vector<double> values) {
  ParamStore<double> s;
  const std::size_t n = values.size();
  s.add("p", Tensor<double>({n}, std::move(values), true));
  return s;
}

Gradients<double> grads_of(const ParamStore<double>& s, std::vector<double> g) {
  // Σ g·p has gradient g.
  const auto& p = s.at("p");
  const std::size_t n = g.size();
  return backward(ops::sum(ops::mul(p, Tensor<double>({n}, std::move(g)))));
}

TEST(AdamTest, FirstStepIsSignedLr) {
  auto s = one_param({1.0, -2.0, 0.5});
  OptimState<double> st;
  adam_step(s, grads_of(s, {3.0, -0.25, 1e-3}), st, 0.01);
  const auto v = s.at("p").values();
  EXPECT_NEAR((v[0] - 1.0) / -0.01, 1.0, 1e-6);
  EXPECT_NEAR((v[1] + 2.0) / 0.01, 1.0, 1e-6);
  EXPECT_NEAR((v[2] - 0.5) / -0.01, 1.0, 1e-4);
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamTest, ZeroGradientLeavesParameters) {
  auto s = one_param({1.0, -2.0});
  OptimState<double> st;
  adam_step(s, grads_of(s, {0.0, 0.0}), st, 0.1);
  EXPECT_EQ(s.at("p").values()[0], 1.0);
  EXPECT_EQ(s.at("p").values()[1], -2.0);
}

TEST(AdamTest, TwoStepHandUnroll) {
  const double g = 0.3, lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto s = one_param({2.0});
  OptimState<double> st;
  adam_step(s, grads_of(s, {g}), st, lr);
  adam_step(s, grads_of(s, {g}), st, lr);
  double theta = 2.0, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    theta -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
  EXPECT_NEAR(s.at("p").values()[0], theta, 1e-15);
  EXPECT_EQ(st.m.at("p")[0], m);
  EXPECT_EQ(st.v.at("p")[0], v);
}

TEST(AdamTest, MissingGradientNamesParameter) {
  ParamStore<double> s;
  s.add("used", Tensor<double>({1}, {1.0}, true));
  s.add("orphan", Tensor<double>({1}, {1.0}, true));
  auto g = backward(ops::sum(s.at("used")));
  OptimState<double> st;
  try {
    adam_step(s, g, st, 0.1);
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("orphan"), std::string::npos);
  }
}

TEST(AdamTest, IndependentOfOtherParameters) {
  // Updating {a, b} together equals updating a alone.
  ParamStore<double> both, alone;
  both.add("a", Tensor<double>({2}, {1.0, 2.0}, true));
  both.add("b", Tensor<double>({1}, {3.0}, true));
  alone.add("a", Tensor<double>({2}, {1.0, 2.0}, true));
  auto loss = [](const Tensor<double>& a) { return ops::sum(ops::mul(a, a)); };
  OptimState<double> s1, s2;
  for (int i = 0; i < 3; ++i) {
    adam_step(both, backward(ops::add(loss(both.at("a")), ops::sum(both.at("b")))), s1, 0.1);
    adam_step(alone, backward(loss(alone.at("a"))), s2, 0.1);
  }
  EXPECT_TRUE(bitwise_equal(both.at("a"), alone.at("a")));
}

TEST(RunConfigTest, ReadsNamespacedKeys) {
  auto c = RunConfig::read(KeyValueConfig::parse(
      "model.filters = 8,16,24,32\nmodel.depths = 1,1,1,1\nmodel.heads = 1,1,2,4\n"
      "model.head_channels = 8\ntrain.target_size = 96\ntrain.batch_size = 2\n"
      "train.lr_max = 0.002\naug.hflip_p = 0.25\naug.enabled = false\n"));
  EXPECT_EQ(c.model.image_width, 96u);
  EXPECT_EQ(c.model.filters[3], 32u);
  EXPECT_EQ(c.train.batch_size, 2u);
  EXPECT_EQ(c.train.lr_max, 0.002);
  EXPECT_EQ(c.aug.hflip_p, 0.25);
  EXPECT_FALSE(c.aug.enabled);
  auto back = RunConfig::read(c.to_config());
  EXPECT_EQ(back.to_config().to_string(), c.to_config().to_string());
}

TEST(RunConfigTest, Errors) {
  EXPECT_THROW(RunConfig::read(KeyValueConfig::parse("train.batch_size = 0\n")), ConfigError);
  EXPECT_THROW(RunConfig::read(KeyValueConfig::parse("train.epochs = 0\n")), ConfigError);
  EXPECT_THROW(RunConfig::read(KeyValueConfig::parse("train.target_size = 50\n")), ConfigError);
  EXPECT_THROW(
      RunConfig::read(KeyValueConfig::parse("train.target_size = 64\nmodel.image_size = 32\n")),
      ConfigError);
  EXPECT_THROW(RunConfig::read(KeyValueConfig::parse("train.lr_min = 1\n")), ConfigError);
}

TEST(CheckpointTest, RoundTripIsBitwise) {
  auto cfg = small_run();
  Trainer t(cfg, load_training_data(cfg));
  t.step();
  t.step();
  const auto ck = t.checkpoint();
  const auto bytes = ck.serialize();
  const auto back = Checkpoint::deserialize(bytes);
  EXPECT_EQ(back.step, 2u);
  EXPECT_EQ(back.config_text, ck.config_text);
  ASSERT_EQ(back.params.names(), ck.params.names());
  for (const auto& name : ck.params.names()) {
    EXPECT_TRUE(bitwise_equal(back.params.at(name), ck.params.at(name))) << name;
    EXPECT_EQ(back.optim->m.at(name), ck.optim->m.at(name));
    EXPECT_EQ(back.optim->v.at(name), ck.optim->v.at(name));
  }
  EXPECT_EQ(back.serialize(), bytes);

  const auto path = std::filesystem::temp_directory_path() / "m2unet_trainer_test.ckpt";
  ck.save(path.string());
  Checkpoint::load(path.string()).save(path.string());
  EXPECT_EQ(Checkpoint::load(path.string()).serialize(), bytes);
  std::filesystem::remove(path);
}

TEST(CheckpointTest, RejectsCorruptInput) {
  auto cfg = small_run();
  Trainer t(cfg, load_training_data(cfg));
  auto bytes = t.checkpoint().serialize();
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(Checkpoint::deserialize(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  EXPECT_THROW(Checkpoint::deserialize(bad), FormatError);
  bad.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
  EXPECT_THROW(Checkpoint::deserialize(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(Checkpoint::deserialize(bad), FormatError);
  EXPECT_THROW(Checkpoint::load("/nonexistent/x.ckpt"), UsageError);
}

TEST(CheckpointTest, ModelFromCheckpointPredictsIdentically) {
  auto cfg = small_run();
  auto data = load_training_data(cfg);
  Trainer t(cfg, data);
  t.step();
  auto m = model_from_checkpoint(Checkpoint::deserialize(t.checkpoint().serialize()));
  EXPECT_EQ(predict(m, data[0]), predict(t.model(), data[0]));
}

TEST(TrainerTest, DeterministicLosses) {
  auto cfg = small_run();
  auto data = load_training_data(cfg);
  Trainer a(cfg, data), b(cfg, data);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(a.step(), b.step()) << i;
}

TEST(TrainerTest, ResumeMatchesUninterruptedRun) {
  auto cfg = small_run();
  auto data = load_training_data(cfg);
  Trainer full(cfg, data);
  std::vector<double> ref;
  for (int i = 0; i < 8; ++i) ref.push_back(full.step());

  Trainer first(cfg, data);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(first.step(), ref[i]);
  const auto bytes = first.checkpoint().serialize();
  Trainer resumed(Checkpoint::deserialize(bytes), data);
  EXPECT_EQ(resumed.global_step(), 4u);
  for (int i = 4; i < 8; ++i) EXPECT_EQ(resumed.step(), ref[i]) << i;
}

TEST(TrainerTest, ScheduleAndLogging) {
  auto cfg = small_run(false);
  cfg.train.epochs = 3;
  Trainer t(cfg, load_training_data(cfg));
  EXPECT_EQ(t.steps_per_epoch(), 2u);  // 5 samples, batch 3
  EXPECT_EQ(t.total_steps(), 6u);
  std::ostringstream log;
  const auto logs = t.run(&log);
  EXPECT_TRUE(t.finished());
  ASSERT_EQ(logs.size(), 3u);
  EXPECT_EQ(logs[0].epoch, 0u);
  EXPECT_EQ(log.str().substr(0, 20), "epoch\tmean_loss\tlr\n1");
  EXPECT_THROW(t.step(), UsageError);

  cfg.train.max_steps = 3;
  Trainer capped(cfg, load_training_data(cfg));
  EXPECT_EQ(capped.total_steps(), 3u);
  EXPECT_EQ(capped.run().size(), 2u);
}

TEST(TrainerTest, LossDecreasesOnSyntheticData) {
  auto cfg = small_run(false);
  cfg.train.epochs = 20;
  cfg.train.synth_count = 8;
  cfg.train.batch_size = 4;
  Trainer t(cfg, load_training_data(cfg));
  const auto logs = t.run();
  ASSERT_EQ(logs.size(), 20u);
  EXPECT_LT(logs.back().mean_loss, logs.front().mean_loss);
}

TEST(TrainerTest, WritesCheckpoints) {
  const auto dir = std::filesystem::temp_directory_path() / "m2unet_trainer_ckpts";
  std::filesystem::remove_all(dir);
  auto cfg = small_run(false);
  cfg.train.epochs = 2;
  cfg.train.checkpoint_every = 1;
  cfg.train.out_dir = dir.string();
  Trainer t(cfg, load_training_data(cfg));
  t.run();
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_0001.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_0002.ckpt"));
  EXPECT_EQ(Checkpoint::load((dir / "final.ckpt").string()).step, 4u);
  std::filesystem::remove_all(dir);
}

TEST(TrainerTest, RejectsBadData) {
  auto cfg = small_run();
  EXPECT_THROW(Trainer(cfg, {}), UsageError);
  EXPECT_THROW(Trainer(cfg, synth_polyp_dataset(2, 64, 1)), UsageError);
}

TEST(EvaluateTest, OraclePredictors) {
  auto data = synth_polyp_dataset(4, 32, 3);
  auto truth = evaluate_predictions(data, [](const Sample& s) {
    return std::vector<float>(s.mask.values().begin(), s.mask.values().end());
  });
  EXPECT_EQ(truth.m_dice, 1.0);
  EXPECT_EQ(truth.m_iou, 1.0);
  EXPECT_EQ(truth.mae, 0.0);
  auto half = evaluate_predictions(
      data, [](const Sample& s) { return std::vector<float>(s.mask.numel(), 0.5f); });
  EXPECT_DOUBLE_EQ(half.mae, 0.5);
  std::size_t rows = 0;
  for (char c : half.to_tsv()) rows += c == '\n';
  EXPECT_EQ(rows, 1 + data.size() + 1);  // header, samples, aggregate
}

TEST(EvaluateTest, SizeMismatchIsUsageError) {
  auto cfg = small_run();
  auto m = build_model<float>(cfg.model, 1);
  EXPECT_THROW(evaluate(m, synth_polyp_dataset(1, 64, 1)), UsageError);
  EXPECT_EQ(evaluate(m, synth_polyp_dataset(2, 32, 1)).per_sample.size(), 2u);
}

}  // namespace
}  // namespace m2unet
