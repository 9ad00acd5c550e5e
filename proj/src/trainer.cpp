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

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>

#include "m2unet/error.hpp"
#include "m2unet/ops.hpp"

namespace m2unet {

namespace {

constexpr char kMagic[4] = {'M', '2', 'U', 'N'};

// ---- little-endian byte stream ------------------------------------------

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void tensor(const std::string& name, const Shape& shape, std::span<const float> values) {
    str(name);
    u32(static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) u32(static_cast<std::uint32_t>(e));
    for (float v : values) f32(v);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor<float>> tensor() {
    std::string name = str();
    const std::uint32_t rank = u32();
    if (rank > 8) throw FormatError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = u32();
    const std::size_t n = numel(shape);
    need(n * 4);
    std::vector<float> values(n);
    for (auto& v : values) v = f32();
    return {std::move(name), Tensor<float>(std::move(shape), std::move(values), true)};
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) {
      throw FormatError("checkpoint: truncated at byte offset " + std::to_string(in_.size()) +
                        " (needed " + std::to_string(n) + " bytes at offset " +
                        std::to_string(pos_) + ")");
    }
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
  if (total_steps == 0 || step > total_steps) {
    throw UsageError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                     std::to_string(total_steps) + "]");
  }
  if (lr_min > lr_max) throw UsageError("cosine_lr: lr_min exceeds lr_max");
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
void adam_step(ParamStore<T>& params, const Gradients<T>& grads, OptimState<T>& state, double lr) {
  for (const auto& [name, p] : params) {
    if (!grads.contains(p)) throw UsageError("adam_step: no gradient for parameter '" + name + "'");
  }
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(h.beta1, t), c2 = 1.0 - std::pow(h.beta2, t);
  for (auto& [name, p] : params) {
    const Tensor<T> g = grads[p];
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(p.numel(), T(0));
      v.assign(p.numel(), T(0));
    }
    if (m.size() != p.numel() || v.size() != p.numel()) {
      throw UsageError("adam_step: moment size mismatch for parameter '" + name + "'");
    }
    auto w = p.mutable_values();
    const auto gv = g.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = gv[i];
      const double mi = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
      const double vi = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1, vhat = vi / c2;
      w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + h.eps));
    }
  }
  ++state.step;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  if (target_size == 0 || target_size % 32 != 0) {
    throw ConfigError("train.target_size must be a positive multiple of 32");
  }
  if (!(lr_max > 0.0) || lr_min < 0.0 || lr_min > lr_max) {
    throw ConfigError("train.lr_max must be positive and 0 <= train.lr_min <= train.lr_max");
  }
  if (!(alpha > 0.0)) throw ConfigError("train.alpha must be positive");
  if (data.empty() && synth_count == 0) {
    throw ConfigError("train.synth_count must be positive when train.data is empty");
  }
}

void TrainConfig::write(KeyValueConfig& out) const {
  out.set("train.epochs", std::to_string(epochs));
  out.set("train.batch_size", std::to_string(batch_size));
  out.set("train.target_size", std::to_string(target_size));
  out.set("train.lr_max", num(lr_max));
  out.set("train.lr_min", num(lr_min));
  out.set("train.alpha", num(alpha));
  out.set("train.seed", std::to_string(seed));
  out.set("train.data", data);
  out.set("train.synth_count", std::to_string(synth_count));
  out.set("train.out_dir", out_dir);
  out.set("train.checkpoint_every", std::to_string(checkpoint_every));
  out.set("train.max_steps", std::to_string(max_steps));
}

TrainConfig TrainConfig::read(const KeyValueConfig& in) {
  TrainConfig c;
  c.epochs = in.get_size("train.epochs", c.epochs);
  c.batch_size = in.get_size("train.batch_size", c.batch_size);
  c.target_size = in.get_size("train.target_size", c.target_size);
  c.lr_max = in.get_double("train.lr_max", c.lr_max);
  c.lr_min = in.get_double("train.lr_min", c.lr_min);
  c.alpha = in.get_double("train.alpha", c.alpha);
  c.seed = in.get_u64("train.seed", c.seed);
  c.data = in.get_string("train.data", c.data);
  c.synth_count = in.get_size("train.synth_count", c.synth_count);
  c.out_dir = in.get_string("train.out_dir", c.out_dir);
  c.checkpoint_every = in.get_size("train.checkpoint_every", c.checkpoint_every);
  c.max_steps = in.get_size("train.max_steps", c.max_steps);
  c.validate();
  return c;
}

RunConfig RunConfig::read(const KeyValueConfig& in) {
  RunConfig c;
  c.train = TrainConfig::read(in);
  KeyValueConfig model_kv = in;
  const bool sized = in.has("model.image_size") || in.has("model.image_width") ||
                     in.has("model.image_height");
  if (!sized) model_kv.set("model.image_size", std::to_string(c.train.target_size));
  c.model = ModelConfig::read(model_kv);
  if (c.model.image_width != c.train.target_size || c.model.image_height != c.train.target_size) {
    throw ConfigError("model image size " + std::to_string(c.model.image_width) + "x" +
                      std::to_string(c.model.image_height) + " differs from train.target_size " +
                      std::to_string(c.train.target_size));
  }
  c.aug = AugmentConfig::read(in);
  return c;
}

KeyValueConfig RunConfig::to_config() const {
  KeyValueConfig kv;
  model.write(kv);
  train.write(kv);
  aug.write(kv);
  return kv;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kVersion);
  w.u64(step);
  w.str(config_text);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) w.tensor(name, t.shape(), t.values());
  w.u8(optim ? 1 : 0);
  if (optim) {
    w.u64(optim->step);
    w.f64(optim->hyper.beta1);
    w.f64(optim->hyper.beta2);
    w.f64(optim->hyper.eps);
    w.u32(static_cast<std::uint32_t>(optim->m.size()));
    for (const auto& [name, m] : optim->m) {
      const auto& v = optim->v.at(name);
      w.tensor(name + "#m", {m.size()}, m);
      w.tensor(name + "#v", {v.size()}, v);
    }
  }
  return w.take();
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.step = r.u64();
  ck.config_text = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    ck.params.add(name, std::move(t));
  }
  if (r.u8() != 0) {
    OptimState<float> st;
    st.step = r.u64();
    st.hyper.beta1 = r.f64();
    st.hyper.beta2 = r.f64();
    st.hyper.eps = r.f64();
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      auto [mname, m] = r.tensor();
      auto [vname, v] = r.tensor();
      if (mname.size() < 2 || !mname.ends_with("#m") || vname != mname.substr(0, mname.size() - 2) + "#v") {
        throw FormatError("checkpoint: malformed optimizer entry '" + mname + "'");
      }
      const std::string name = mname.substr(0, mname.size() - 2);
      st.m[name].assign(m.values().begin(), m.values().end());
      st.v[name].assign(v.values().begin(), v.values().end());
    }
    ck.optim = std::move(st);
  }
  if (!r.done()) {
    throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));
  }
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UsageError("failed writing checkpoint '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint '" + path + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  try {
    return deserialize(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  const RunConfig cfg = ckpt.run_config();
  Model<float> m = build_model<float>(cfg.model, cfg.train.seed);
  if (m.params.names() != ckpt.params.names()) {
    throw FormatError("checkpoint parameters do not match the stored model configuration");
  }
  for (auto& [name, t] : m.params) {
    const auto& src = ckpt.params.at(name);
    if (src.shape() != t.shape()) {
      throw FormatError("checkpoint: parameter '" + name + "' has shape " + to_string(src.shape()) +
                        ", model expects " + to_string(t.shape()));
    }
    auto dst = t.mutable_values();
    std::copy(src.values().begin(), src.values().end(), dst.begin());
  }
  return m;
}

std::vector<Sample> load_training_data(const RunConfig& cfg) {
  if (cfg.train.data.empty()) {
    return synth_polyp_dataset(cfg.train.synth_count, cfg.train.target_size, cfg.train.seed);
  }
  return load_dataset(cfg.train.data, cfg.train.target_size);
}

Trainer::Trainer(RunConfig cfg, std::vector<Sample> data)
    : cfg_(std::move(cfg)), data_(std::move(data)),
      model_(build_model<float>(cfg_.model, cfg_.train.seed)) {
  if (data_.empty()) throw UsageError("training dataset is empty");
  for (const auto& s : data_) {
    if (s.height() != cfg_.model.image_height || s.width() != cfg_.model.image_width) {
      throw UsageError("sample '" + s.id + "' is " + to_string(s.image.shape()) +
                       ", model expects " + std::to_string(cfg_.model.image_height) + "x" +
                       std::to_string(cfg_.model.image_width));
    }
  }
}

Trainer::Trainer(const Checkpoint& ckpt, std::vector<Sample> data)
    : Trainer(ckpt.run_config(), std::move(data)) {
  model_ = model_from_checkpoint(ckpt);
  step_ = ckpt.step;
  if (ckpt.optim) optim_ = *ckpt.optim;
  if (optim_.step != step_) throw FormatError("checkpoint: optimizer step differs from step counter");
}

std::size_t Trainer::steps_per_epoch() const {
  return (data_.size() + cfg_.train.batch_size - 1) / cfg_.train.batch_size;
}

std::size_t Trainer::total_steps() const {
  const std::size_t full = cfg_.train.epochs * steps_per_epoch();
  return cfg_.train.max_steps == 0 ? full : std::min(full, cfg_.train.max_steps);
}

std::vector<std::size_t> Trainer::epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order(data_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(cfg_.train.seed, 0x5348, epoch));
  rng.shuffle(order);
  return order;
}

double Trainer::step() {
  if (finished()) throw UsageError("training schedule already finished");
  const std::size_t spe = steps_per_epoch();
  const std::size_t epoch = step_ / spe, pos = step_ % spe;
  const auto order = epoch_order(epoch);
  const std::size_t begin = pos * cfg_.train.batch_size;
  const std::size_t end = std::min(begin + cfg_.train.batch_size, data_.size());

  std::vector<Sample> batch;
  for (std::size_t k = begin; k < end; ++k) {
    const std::size_t idx = order[k];
    Rng rng = sample_rng(cfg_.train.seed, epoch, idx);
    const Sample& donor = data_[rng.below(data_.size())];
    batch.push_back(augment(data_[idx], cfg_.aug, rng, &donor));
  }
  std::vector<std::size_t> all(batch.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto [x, y] = make_batch(batch, all);

  const double lr = cosine_lr(step_, total_steps(), cfg_.train.lr_max, cfg_.train.lr_min);
  const auto loss = batch_jaccard_loss(y, m2unet_forward(x, model_), cfg_.train.alpha);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("training loss is not finite");
  adam_step(model_.params, backward(loss), optim_, lr);
  ++step_;
  return value;
}

EpochLog Trainer::run_epoch() {
  const std::size_t spe = steps_per_epoch();
  EpochLog log;
  log.epoch = step_ / spe;
  const std::size_t stop = std::min((log.epoch + 1) * spe, total_steps());
  std::size_t n = 0;
  double sum = 0;
  while (step_ < stop) {
    log.lr = cosine_lr(step_, total_steps(), cfg_.train.lr_max, cfg_.train.lr_min);
    sum += step();
    ++n;
  }
  log.mean_loss = n ? sum / static_cast<double>(n) : 0.0;
  return log;
}

void Trainer::maybe_checkpoint(std::size_t epoch) const {
  const auto& t = cfg_.train;
  if (t.out_dir.empty()) return;
  std::filesystem::create_directories(t.out_dir);
  const auto dir = std::filesystem::path(t.out_dir);
  if (finished()) checkpoint().save((dir / "final.ckpt").string());
  if (t.checkpoint_every != 0 && (epoch + 1) % t.checkpoint_every == 0) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch + 1);
    checkpoint().save((dir / name).string());
  }
}

std::vector<EpochLog> Trainer::run(std::ostream* log) {
  std::vector<EpochLog> logs;
  if (log) *log << "epoch\tmean_loss\tlr\n";
  while (!finished()) {
    logs.push_back(run_epoch());
    const auto& e = logs.back();
    if (log) {
      char line[96];
      std::snprintf(line, sizeof line, "%zu\t%.6f\t%.6g\n", e.epoch + 1, e.mean_loss, e.lr);
      *log << line << std::flush;
    }
    maybe_checkpoint(e.epoch);
  }
  return logs;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config_text = cfg_.to_config().to_string();
  ck.step = step_;
  for (const auto& [name, t] : model_.params) {
    ck.params.add(name, Tensor<float>(t.shape(), {t.values().begin(), t.values().end()}, true));
  }
  ck.optim = optim_;
  return ck;
}

std::vector<float> predict(const Model<float>& model, const Sample& sample) {
  const auto& c = model.config;
  if (sample.height() != c.image_height || sample.width() != c.image_width) {
    throw UsageError("sample '" + sample.id + "' is " + std::to_string(sample.height()) + "x" +
                     std::to_string(sample.width()) + " but the model expects " +
                     std::to_string(c.image_height) + "x" + std::to_string(c.image_width));
  }
  NoGradGuard no_grad;
  const auto x = ops::reshape(sample.image, {1, sample.height(), sample.width(), 3});
  const auto y = m2unet_forward(x, model);
  return {y.values().begin(), y.values().end()};
}

MetricsReport evaluate_predictions(const std::vector<Sample>& samples, const Predictor& predictor) {
  MetricsReport report;
  for (const auto& s : samples) {
    const auto prob = predictor(s);
    std::vector<std::uint8_t> mask(s.mask.numel());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = s.mask.values()[i] != 0.0f;
    report.add(s.id, mask, std::span<const float>(prob));
  }
  return report;
}

MetricsReport evaluate(const Model<float>& model, const std::vector<Sample>& samples) {
  return evaluate_predictions(samples, [&](const Sample& s) { return predict(model, s); });
}

template void adam_step(ParamStore<float>&, const Gradients<float>&, OptimState<float>&, double);
template void adam_step(ParamStore<double>&, const Gradients<double>&, OptimState<double>&, double);

}  // namespace m2unet
