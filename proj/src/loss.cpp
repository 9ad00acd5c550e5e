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

#include "m2unet/loss.hpp"

#include <cmath>
#include <cstdio>

#include "m2unet/error.hpp"
#include "m2unet/ops.hpp"

namespace m2unet {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": sizes differ (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
  }
}

struct Counts {
  std::size_t a = 0, b = 0, both = 0;
};

Counts count(std::span<const std::uint8_t> y, std::span<const std::uint8_t> yhat, const char* what) {
  require_same_size(y.size(), yhat.size(), what);
  Counts c;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool a = y[i] != 0, b = yhat[i] != 0;
    c.a += a;
    c.b += b;
    c.both += a && b;
  }
  return c;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

template <typename T>
Tensor<T> jaccard_loss(const Tensor<T>& y, const Tensor<T>& yhat, double alpha) {
  if (y.shape() != yhat.shape()) {
    throw DimensionError("jaccard_loss: target " + to_string(y.shape()) + " vs prediction " +
                         to_string(yhat.shape()));
  }
  if (!(alpha > 0.0)) throw ConfigError("jaccard_loss: alpha must be positive");
  const T a = static_cast<T>(alpha);
  const auto target = y.detach();
  const auto inter = ops::sum(ops::mul(target, yhat));
  const auto total = ops::add(ops::sum(target), ops::sum(yhat));
  const auto ratio = ops::div(ops::add_scalar(inter, a), ops::add_scalar(ops::sub(total, inter), a));
  return ops::scale(ops::add_scalar(ops::scale(ratio, T(-1)), T(1)), a);
}

template <typename T>
Tensor<T> batch_jaccard_loss(const Tensor<T>& y, const Tensor<T>& yhat, double alpha) {
  if (y.shape() != yhat.shape() || y.rank() < 1) {
    throw DimensionError("batch_jaccard_loss: target " + to_string(y.shape()) +
                         " vs prediction " + to_string(yhat.shape()));
  }
  if (!(alpha > 0.0)) throw ConfigError("batch_jaccard_loss: alpha must be positive");
  const T a = static_cast<T>(alpha);
  const auto target = y.detach();
  const auto inter = ops::sum_per_sample(ops::mul(target, yhat));
  const auto total = ops::add(ops::sum_per_sample(target), ops::sum_per_sample(yhat));
  const auto ratio = ops::div(ops::add_scalar(inter, a), ops::add_scalar(ops::sub(total, inter), a));
  return ops::mean(ops::scale(ops::add_scalar(ops::scale(ratio, T(-1)), T(1)), a));
}

template <typename T>
std::vector<std::uint8_t> binarize(std::span<const T> prob, double threshold) {
  std::vector<std::uint8_t> out(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) {
    out[i] = static_cast<double>(prob[i]) >= threshold ? 1 : 0;
  }
  return out;
}

double dice(std::span<const std::uint8_t> y, std::span<const std::uint8_t> yhat) {
  const auto c = count(y, yhat, "dice");
  if (c.a + c.b == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

double iou(std::span<const std::uint8_t> y, std::span<const std::uint8_t> yhat) {
  const auto c = count(y, yhat, "iou");
  const std::size_t uni = c.a + c.b - c.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.both) / static_cast<double>(uni);
}

template <typename T>
double mae(std::span<const std::uint8_t> y, std::span<const T> prob) {
  require_same_size(y.size(), prob.size(), "mae");
  if (y.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    s += std::fabs((y[i] != 0 ? 1.0 : 0.0) - static_cast<double>(prob[i]));
  }
  return s / static_cast<double>(y.size());
}

template <typename T>
const SampleMetrics& MetricsReport::add(const std::string& id, std::span<const std::uint8_t> y,
                                        std::span<const T> prob) {
  const auto bin = binarize(prob);
  per_sample.push_back({id, dice(y, bin), iou(y, bin), m2unet::mae(y, prob)});
  double d = 0, j = 0, e = 0;
  for (const auto& s : per_sample) {
    d += s.dice;
    j += s.iou;
    e += s.mae;
  }
  const double n = static_cast<double>(per_sample.size());
  m_dice = d / n;
  m_iou = j / n;
  mae = e / n;
  return per_sample.back();
}

std::string MetricsReport::to_tsv() const {
  std::string out = "sample\tdice\tiou\tmae\n";
  for (const auto& s : per_sample) {
    out += s.id + "\t" + fmt4(s.dice) + "\t" + fmt4(s.iou) + "\t" + fmt4(s.mae) + "\n";
  }
  out += "mean\t" + fmt4(m_dice) + "\t" + fmt4(m_iou) + "\t" + fmt4(mae) + "\n";
  return out;
}

#define M2UNET_INSTANTIATE(T)                                                                  \
  template Tensor<T> jaccard_loss(const Tensor<T>&, const Tensor<T>&, double);                 \
  template Tensor<T> batch_jaccard_loss(const Tensor<T>&, const Tensor<T>&, double);           \
  template std::vector<std::uint8_t> binarize(std::span<const T>, double);                     \
  template double mae(std::span<const std::uint8_t>, std::span<const T>);                      \
  template const SampleMetrics& MetricsReport::add(const std::string&,                         \
                                                   std::span<const std::uint8_t>,              \
                                                   std::span<const T>);

M2UNET_INSTANTIATE(float)
M2UNET_INSTANTIATE(double)
#undef M2UNET_INSTANTIATE

}  // namespace m2unet
