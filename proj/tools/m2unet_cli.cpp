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

// Command-line front end: train, eval, predict, gradcheck, synth.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "m2unet/data.hpp"
#include "m2unet/error.hpp"
#include "m2unet/gradsuite.hpp"
#include "m2unet/trainer.hpp"

namespace {

using namespace m2unet;

// Writes `text` to stdout and, when `path` is set, to that file.
void emit(const std::string& text, const std::string& path) {
  std::fputs(text.c_str(), stdout);
  if (path.empty()) return;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out << text;
}

// Data preprocessing produces square samples only.
std::size_t square_input(const Model<float>& model) {
  if (model.config.image_width != model.config.image_height) {
    throw UsageError("checkpoint model input is not square");
  }
  return model.config.image_width;
}

int cmd_train(const std::string& config_path, const std::string& resume, const std::string& out) {
  std::ostringstream log;
  if (resume.empty()) {
    auto cfg = RunConfig::read(KeyValueConfig::load(config_path));
    Trainer t(cfg, load_training_data(cfg));
    t.run(&log);
  } else {
    // The checkpoint carries the full run configuration; --config is only
    // cross-checked so a stale pairing fails loudly.
    auto ckpt = Checkpoint::load(resume);
    auto cfg = ckpt.run_config();
    if (!config_path.empty()) {
      auto given = RunConfig::read(KeyValueConfig::load(config_path));
      if (given.to_config().to_string() != ckpt.config_text) {
        throw UsageError("--config does not match the configuration stored in '" + resume + "'");
      }
    }
    Trainer t(ckpt, load_training_data(cfg));
    t.run(&log);
  }
  emit(log.str(), out);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, const std::string& out) {
  auto model = model_from_checkpoint(Checkpoint::load(ckpt_path));
  auto samples = load_dataset(data, square_input(model));
  emit(evaluate(model, samples).to_tsv(), out);
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image_path,
                const std::string& out) {
  auto model = model_from_checkpoint(Checkpoint::load(ckpt_path));
  const std::size_t size = square_input(model);
  auto image = read_pnm(image_path);
  RawImage blank{image.width, image.height, 1,
                 std::vector<std::uint8_t>(image.width * image.height, 0)};
  auto sample = preprocess(image, blank, size, image_path);
  auto prob = predict(model, sample);
  write_pnm(out, probability_to_pgm(prob, size, size));
  return 0;
}

int cmd_gradcheck(const std::string& module, std::size_t seeds) {
  auto results = run_grad_suite(module, seeds);
  std::fputs(grad_suite_tsv(results).c_str(), stdout);
  for (const auto& r : results) {
    if (!r.passed()) {
      std::fprintf(stderr, "%s/%s: %s\n", r.module.c_str(), r.name.c_str(), r.worst.c_str());
      return 1;
    }
  }
  return 0;
}

int cmd_synth(std::size_t n, std::size_t size, std::uint64_t seed, const std::string& out) {
  write_dataset_dir(out, synth_polyp_raw(n, size, seed));
  std::printf("wrote %zu samples to %s\n", n, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"M2UNet polyp segmentation: training, evaluation and checks"};
  app.require_subcommand(1);

  std::string config, resume, ckpt, data, image, out, module;
  std::size_t n = 8, size = 64, seeds = 20;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train from a key = value config file");
  train->add_option("--config", config, "Run configuration (model.*, train.*, aug.*)");
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_option("--out", out, "Also write the epoch log here");
  train->callback([&] {
    if (config.empty() && resume.empty()) throw CLI::RequiredError("--config or --resume");
  });

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset directory");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval->add_option("--data", data, "Directory with images/ and masks/")->required();
  eval->add_option("--out", out, "Also write the report here");

  auto* pred = app.add_subcommand("predict", "Write the probability map of one image");
  pred->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  pred->add_option("--image", image, "Input PPM")->required();
  pred->add_option("--out", out, "Output PGM")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite (f64)");
  grad->add_option("--module", module, "One of ops, conv_former, transformer, mu, jaccard_loss, model");
  grad->add_option("--seeds", seeds, "Seeds per case")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic polyp dataset");
  synth->add_option("--n", n, "Number of samples")->required()->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "Square image size")->required()->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Generator seed")->required();
  synth->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config, resume, out);
    if (*eval) return cmd_eval(ckpt, data, out);
    if (*pred) return cmd_predict(ckpt, image, out);
    if (*grad) return cmd_gradcheck(module, seeds);
    if (*synth) return cmd_synth(n, size, seed, out);
  } catch (const m2unet::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
