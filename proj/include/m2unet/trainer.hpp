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

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "m2unet/config.hpp"
#include "m2unet/data.hpp"
#include "m2unet/loss.hpp"
#include "m2unet/model.hpp"
#include "m2unet/params.hpp"
#include "m2unet/tensor.hpp"

namespace m2unet {

// lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total_steps)).
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments are keyed by parameter name and created lazily on the first step.
template <typename T>
struct OptimState {
  std::size_t step = 0;
  AdamHyper hyper;
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
};

// One bias-corrected Adam update of every parameter, in place. Each element
// is updated independently; arithmetic runs in double.
template <typename T>
void adam_step(ParamStore<T>& params, const Gradients<T>& grads, OptimState<T>& state, double lr);

struct TrainConfig {
  std::size_t epochs = 158;
  std::size_t batch_size = 4;
  std::size_t target_size = 64;
  double lr_max = 1e-4;
  double lr_min = 0.0;
  double alpha = kJaccardAlpha;
  std::uint64_t seed = 0;
  // Dataset directory (images/, masks/). Empty: generate `synth_count`
  // synthetic samples from `seed`.
  std::string data;
  std::size_t synth_count = 8;
  std::string out_dir;
  // Checkpoint every k epochs (0: only at the end, and only with out_dir).
  std::size_t checkpoint_every = 0;
  // Stop after this many optimizer steps (0: epochs × steps per epoch).
  std::size_t max_steps = 0;

  void validate() const;
  void write(KeyValueConfig& out) const;
  static TrainConfig read(const KeyValueConfig& in);
};

// Everything that determines a run: model.*, train.*, aug.* keys.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentConfig aug;

  // The model's image size follows train.target_size unless set explicitly,
  // in which case the two must agree.
  static RunConfig read(const KeyValueConfig& in);
  KeyValueConfig to_config() const;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_text;  // RunConfig::to_config().to_string()
  std::size_t step = 0;
  ParamStore<float> params;
  std::optional<OptimState<float>> optim;

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  RunConfig run_config() const { return RunConfig::read(KeyValueConfig::parse(config_text)); }
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;  // at the epoch's last step
};

// Owns the model, optimizer state and the step counter. Every random choice
// (shuffle order, augmentation, cutmix donor) derives from (seed, epoch,
// index), so a run resumed at any step replays the uninterrupted schedule.
class Trainer {
 public:
  Trainer(RunConfig cfg, std::vector<Sample> data);
  // Resumes from a checkpoint; `data` must be the same dataset.
  Trainer(const Checkpoint& ckpt, std::vector<Sample> data);

  // One optimizer step on the next batch; returns its loss.
  double step();
  // Steps to the end of the current epoch.
  EpochLog run_epoch();
  // Runs until the schedule ends, logging `epoch\tmean_loss\tlr` rows.
  std::vector<EpochLog> run(std::ostream* log = nullptr);

  bool finished() const { return step_ >= total_steps(); }
  std::size_t global_step() const { return step_; }
  std::size_t steps_per_epoch() const;
  std::size_t total_steps() const;
  const RunConfig& config() const { return cfg_; }
  const Model<float>& model() const { return model_; }
  Checkpoint checkpoint() const;

 private:
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;
  void maybe_checkpoint(std::size_t epoch) const;

  RunConfig cfg_;
  std::vector<Sample> data_;
  Model<float> model_;
  OptimState<float> optim_;
  std::size_t step_ = 0;
};

// Loads or synthesizes the dataset named by the config.
std::vector<Sample> load_training_data(const RunConfig& cfg);

// Builds the model a checkpoint describes with its stored parameters.
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

using Predictor = std::function<std::vector<float>(const Sample&)>;

// Scores per-sample probability planes [H·W] against the masks.
MetricsReport evaluate_predictions(const std::vector<Sample>& samples, const Predictor& predict);
// Forward pass per sample without augmentation. Samples must match the model
// input size (UsageError otherwise).
MetricsReport evaluate(const Model<float>& model, const std::vector<Sample>& samples);
std::vector<float> predict(const Model<float>& model, const Sample& sample);

}  // namespace m2unet
