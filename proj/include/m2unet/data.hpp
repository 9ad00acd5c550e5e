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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "m2unet/config.hpp"
#include "m2unet/random.hpp"
#include "m2unet/tensor.hpp"

namespace m2unet {

// 8-bit pixel grid, row-major H×W×C.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

// Binary PGM (P5, 1 channel) and PPM (P6, 3 channels), maxval ≤ 255, with
// `#` comments in the header. Anything else is a FormatError.
RawImage decode_pnm(std::span<const std::uint8_t> bytes);
RawImage read_pnm(const std::string& path);
// Writes P5 for 1 channel, P6 for 3, maxval 255.
std::vector<std::uint8_t> encode_pnm(const RawImage& image);
void write_pnm(const std::string& path, const RawImage& image);

struct Sample {
  std::string id;
  Tensor<float> image;  // [H, W, 3] in [-1, 1]
  Tensor<float> mask;   // [H, W, 1] in {0, 1}

  std::size_t height() const { return image.dim(0); }
  std::size_t width() const { return image.dim(1); }
};

// Bilinear (half-pixel centers, edge clamp) resize of the image and nearest
// resize of the mask to target×target, then image v/127.5 − 1 and mask
// v > 127. Interpolation runs in double; the result is rounded once to f32.
Sample preprocess(const RawImage& image, const RawImage& mask, std::size_t target,
                  std::string id = {});

// Geometric primitives transform image and mask with the same parameters.
Sample hflip(const Sample& s);
Sample vflip(const Sample& s);
// Counter-clockwise about the image center. Uncovered pixels become −1
// (black) in the image and 0 in the mask.
Sample rotate(const Sample& s, double degrees);
// Keeps the central `fraction` of each side and resizes back.
Sample center_crop(const Sample& s, double fraction);
// Separable piecewise-linear warp: `cells` cells per axis, each stretched by
// 1 + u, u uniform in [−magnitude, magnitude].
Sample grid_distortion(const Sample& s, std::size_t cells, double magnitude, Rng& rng);

// Half-open pixel rectangle [y0, y1) × [x0, x1).
struct Rect {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  std::size_t area() const { return (y1 - y0) * (x1 - x0); }
};

// Sets the rectangle to 0 in the image; the mask is untouched.
Sample cutout(const Sample& s, const Rect& r);
// Pastes the donor's rectangle into both image and mask.
Sample cutmix(const Sample& s, const Sample& donor, const Rect& r);

struct AugmentConfig {
  bool enabled = true;
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double rotate_p = 0.5;
  double rotate_max_degrees = 90.0;
  double crop_p = 0.5;
  double crop_min_fraction = 0.8;
  double grid_p = 0.5;
  std::size_t grid_cells = 5;
  double grid_magnitude = 0.3;
  double cutout_p = 0.5;
  // Hole side as a fraction of the image side, uniform in (0, max].
  double cutout_max_fraction = 0.25;
  double cutmix_p = 0.5;
  double cutmix_beta = 1.0;

  void validate() const;
  void write(KeyValueConfig& out) const;
  static AugmentConfig read(const KeyValueConfig& in);
};

// Applies the enabled ops in a fixed order (crop, rotate, grid, flips,
// cutout, cutmix). `donor` is needed only for cutmix; without one cutmix is
// skipped.
Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng, const Sample* donor = nullptr);

// Stream for one sample of one epoch; independent of visiting order.
Rng sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index);

struct RawPair {
  std::string id;
  RawImage image;
  RawImage mask;
};

// Textured background with 1–3 deformed elliptical blobs; mask is the blob
// support with foreground fraction in [0.02, 0.5].
std::vector<RawPair> synth_polyp_raw(std::size_t n, std::size_t size, std::uint64_t seed);
std::vector<Sample> synth_polyp_dataset(std::size_t n, std::size_t size, std::uint64_t seed);

// Directory layout: images/<id>.ppm and masks/<id>.pgm, matched by stem and
// returned in id order.
std::vector<RawPair> read_dataset_dir(const std::string& dir);
void write_dataset_dir(const std::string& dir, const std::vector<RawPair>& pairs);
std::vector<Sample> load_dataset(const std::string& dir, std::size_t target);

// Stacks samples[indices] into [N,H,W,3] images and [N,H,W,1] masks.
std::pair<Tensor<float>, Tensor<float>> make_batch(const std::vector<Sample>& samples,
                                                   std::span<const std::size_t> indices);

// Quantizes a probability plane [H,W] or [H,W,1] to an 8-bit PGM.
RawImage probability_to_pgm(std::span<const float> prob, std::size_t height, std::size_t width);

}  // namespace m2unet
