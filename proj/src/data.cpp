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

#include "m2unet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "m2unet/error.hpp"

namespace m2unet {

namespace fs = std::filesystem;

namespace {

// ---- PNM -----------------------------------------------------------------

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (std::size_t{1} << 31)) throw FormatError(std::string("pnm: ") + what + " too large");
      ++pos_;
    }
    if (pos_ == start) {
      throw FormatError(std::string("pnm: expected ") + what + " at byte offset " +
                        std::to_string(start));
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the payload.
  void single_space() {
    if (pos_ >= bytes_.size()) {
      throw FormatError("pnm: header truncated at byte offset " + std::to_string(pos_));
    }
    const char c = static_cast<char>(bytes_[pos_]);
    if (c != ' ' && c != '\t' && c != '\r' && c != '\n') {
      throw FormatError("pnm: expected whitespace after maxval at byte offset " +
                        std::to_string(pos_));
    }
    ++pos_;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---- sampling helpers ----------------------------------------------------

// Half-pixel-center source coordinate for output index d (n inputs, m outputs),
// clamped to the valid range.
double source_coord(std::size_t d, std::size_t n, std::size_t m) {
  const double scale = static_cast<double>(n) / static_cast<double>(m);
  const double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
  return std::clamp(s, 0.0, static_cast<double>(n - 1));
}

std::size_t nearest_index(std::size_t d, std::size_t n, std::size_t m) {
  return ((2 * d + 1) * n) / (2 * m);
}

struct Plane {
  const float* data;
  std::size_t h, w, c;
};

// Bilinear sample at (y, x); neighbours outside the plane read `border`.
void bilinear(const Plane& p, double y, double x, float border, float* out) {
  const double fy0 = std::floor(y), fx0 = std::floor(x);
  const double fy = y - fy0, fx = x - fx0;
  const long y0 = static_cast<long>(fy0), x0 = static_cast<long>(fx0);
  auto px = [&](long yy, long xx, std::size_t ch) -> double {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(p.h) || xx >= static_cast<long>(p.w)) {
      return border;
    }
    return p.data[(static_cast<std::size_t>(yy) * p.w + static_cast<std::size_t>(xx)) * p.c + ch];
  };
  for (std::size_t ch = 0; ch < p.c; ++ch) {
    const double a = px(y0, x0, ch), b = px(y0, x0 + 1, ch);
    const double c = px(y0 + 1, x0, ch), d = px(y0 + 1, x0 + 1, ch);
    const double top = a + fx * (b - a), bot = c + fx * (d - c);
    out[ch] = static_cast<float>(top + fy * (bot - top));
  }
}

void nearest(const Plane& p, double y, double x, float border, float* out) {
  const double ry = std::floor(y + 0.5), rx = std::floor(x + 0.5);
  if (ry < 0 || rx < 0 || ry >= static_cast<double>(p.h) || rx >= static_cast<double>(p.w)) {
    for (std::size_t ch = 0; ch < p.c; ++ch) out[ch] = border;
    return;
  }
  const auto yy = static_cast<std::size_t>(ry), xx = static_cast<std::size_t>(rx);
  for (std::size_t ch = 0; ch < p.c; ++ch) out[ch] = p.data[(yy * p.w + xx) * p.c + ch];
}

Plane plane(const Tensor<float>& t) {
  return {t.values().data(), t.dim(0), t.dim(1), t.dim(2)};
}

// Resamples image and mask through a coordinate map: out(y, x) reads the
// source at map(y, x).
template <typename Map>
Sample remap(const Sample& s, Map map, float image_border, float mask_border) {
  const std::size_t h = s.height(), w = s.width();
  std::vector<float> img(h * w * 3), msk(h * w);
  const Plane pi = plane(s.image), pm = plane(s.mask);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto [sy, sx] = map(y, x);
      bilinear(pi, sy, sx, image_border, &img[(y * w + x) * 3]);
      nearest(pm, sy, sx, mask_border, &msk[y * w + x]);
    }
  }
  return {s.id, Tensor<float>({h, w, 3}, std::move(img)), Tensor<float>({h, w, 1}, std::move(msk))};
}

void require_sample(const Sample& s, const char* op) {
  if (s.image.rank() != 3 || s.image.dim(2) != 3 || s.mask.rank() != 3 || s.mask.dim(2) != 1 ||
      s.image.dim(0) != s.mask.dim(0) || s.image.dim(1) != s.mask.dim(1)) {
    throw DimensionError(std::string(op) + ": image " + to_string(s.image.shape()) + " and mask " +
                         to_string(s.mask.shape()) + " do not form a sample");
  }
}

void require_rect(const Sample& s, const Rect& r, const char* op) {
  if (r.y0 > r.y1 || r.x0 > r.x1 || r.y1 > s.height() || r.x1 > s.width()) {
    throw DimensionError(std::string(op) + ": rectangle outside the image");
  }
}

// Source coordinates of a separable grid warp along one axis.
std::vector<double> grid_axis(std::size_t n, std::size_t cells, double magnitude, Rng& rng) {
  std::vector<double> steps(cells);
  double total = 0;
  for (auto& s : steps) {
    s = 1.0 + rng.uniform(-magnitude, magnitude);
    total += s;
  }
  const double span = static_cast<double>(n - 1);
  std::vector<double> src_knots(cells + 1, 0.0);
  for (std::size_t k = 0; k < cells; ++k) src_knots[k + 1] = src_knots[k] + steps[k] / total * span;
  src_knots[cells] = span;
  std::vector<double> coords(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) * cells / span;
    const std::size_t k = std::min(static_cast<std::size_t>(t), cells - 1);
    const double f = t - static_cast<double>(k);
    coords[i] = src_knots[k] + f * (src_knots[k + 1] - src_knots[k]);
  }
  return coords;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

std::size_t scaled_side(std::size_t n, double fraction) {
  const auto v = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
  return std::clamp<std::size_t>(v, 1, n);
}

// ---- synthesis -----------------------------------------------------------

struct Blob {
  double cy, cx, ry, rx, angle;
  std::array<double, 3> amp, phase;
};

bool inside(const Blob& b, double y, double x) {
  const double dy = y - b.cy, dx = x - b.cx;
  const double c = std::cos(b.angle), s = std::sin(b.angle);
  const double u = (c * dx + s * dy) / b.rx, v = (-s * dx + c * dy) / b.ry;
  const double theta = std::atan2(v, u);
  double radius = 1.0;
  for (std::size_t k = 0; k < 3; ++k) radius += b.amp[k] * std::cos((k + 2) * theta + b.phase[k]);
  return u * u + v * v < radius * radius;
}

struct Texture {
  std::array<double, 3> fy, fx, phase;
  double amplitude;

  double at(double y, double x) const {
    double v = 0;
    for (std::size_t k = 0; k < 3; ++k) v += std::sin(fy[k] * y + fx[k] * x + phase[k]);
    return amplitude * v / 3.0;
  }
};

Texture random_texture(Rng& rng, double size, double amplitude) {
  Texture t{};
  for (std::size_t k = 0; k < 3; ++k) {
    t.fy[k] = rng.uniform(-6.0, 6.0) * std::numbers::pi / size;
    t.fx[k] = rng.uniform(-6.0, 6.0) * std::numbers::pi / size;
    t.phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  t.amplitude = amplitude;
  return t;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

RawPair synth_one(std::size_t size, Rng& rng) {
  const double s = static_cast<double>(size);
  for (;;) {
    const std::size_t count = 1 + rng.below(3);
    std::vector<Blob> blobs(count);
    for (auto& b : blobs) {
      b.cy = rng.uniform(0.2, 0.8) * s;
      b.cx = rng.uniform(0.2, 0.8) * s;
      b.ry = rng.uniform(0.08, 0.22) * s;
      b.rx = rng.uniform(0.08, 0.22) * s;
      b.angle = rng.uniform(0.0, std::numbers::pi);
      for (std::size_t k = 0; k < 3; ++k) {
        b.amp[k] = rng.uniform(0.0, 0.08);
        b.phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      }
    }
    const std::array<double, 3> bg{rng.uniform(170, 230), rng.uniform(90, 140),
                                   rng.uniform(80, 130)};
    const std::array<double, 3> fg{rng.uniform(110, 160), rng.uniform(35, 75),
                                   rng.uniform(30, 65)};
    const Texture bg_tex = random_texture(rng, s, 18.0), fg_tex = random_texture(rng, s, 10.0);

    RawPair p{"", {size, size, 3, std::vector<std::uint8_t>(size * size * 3)},
              {size, size, 1, std::vector<std::uint8_t>(size * size)}};
    std::size_t fg_count = 0;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
        bool in = false;
        for (const auto& b : blobs) in = in || inside(b, py, px);
        const double noise = rng.uniform(-6.0, 6.0);
        const double tex = in ? fg_tex.at(py, px) : bg_tex.at(py, px);
        const auto& base = in ? fg : bg;
        for (std::size_t c = 0; c < 3; ++c) {
          p.image.pixels[(y * size + x) * 3 + c] = to_byte(base[c] + tex + noise);
        }
        p.mask.pixels[y * size + x] = in ? 255 : 0;
        fg_count += in;
      }
    }
    const double frac = static_cast<double>(fg_count) / (s * s);
    if (frac >= 0.02 && frac <= 0.5) return p;
  }
}

}  // namespace

RawImage decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("pnm: bad magic (expected binary P5 or P6)");
  }
  RawImage img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader hdr(bytes.subspan(2));
  img.width = hdr.number("width");
  img.height = hdr.number("height");
  const std::size_t maxval = hdr.number("maxval");
  hdr.single_space();
  if (img.width == 0 || img.height == 0) throw FormatError("pnm: zero image extent");
  if (maxval == 0 || maxval > 255) {
    throw FormatError("pnm: maxval " + std::to_string(maxval) + " not in [1, 255]");
  }
  const std::size_t start = 2 + hdr.offset();
  const std::size_t need = img.width * img.height * img.channels;
  if (bytes.size() - start < need) {
    throw FormatError("pnm: payload truncated at byte offset " + std::to_string(bytes.size()) +
                      " (expected " + std::to_string(need) + " bytes from offset " +
                      std::to_string(start) + ")");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    bytes.begin() + static_cast<std::ptrdiff_t>(start + need));
  if (maxval != 255) {
    for (auto& v : img.pixels) {
      if (v > maxval) throw FormatError("pnm: sample exceeds maxval");
      v = static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
    }
  }
  return img;
}

RawImage read_pnm(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return decode_pnm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_pnm(const RawImage& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw FormatError("pnm: cannot encode " + std::to_string(image.channels) + " channels");
  }
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw DimensionError("pnm: pixel buffer does not match extents");
  }
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(image.width) + " " + std::to_string(image.height) +
                             "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

void write_pnm(const std::string& path, const RawImage& image) {
  const auto bytes = encode_pnm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Sample preprocess(const RawImage& image, const RawImage& mask, std::size_t target, std::string id) {
  if (target == 0 || target % 32 != 0) {
    throw ConfigError("preprocess: target size " + std::to_string(target) +
                      " must be a positive multiple of 32");
  }
  if (image.width == 0 || image.height == 0 || mask.width == 0 || mask.height == 0) {
    throw FormatError("preprocess: degenerate source with zero extent");
  }
  if (image.channels != 3) throw FormatError("preprocess: image must have 3 channels");
  if (mask.channels != 1) throw FormatError("preprocess: mask must have 1 channel");
  const std::size_t m = target;
  std::vector<float> img(m * m * 3), msk(m * m);
  for (std::size_t y = 0; y < m; ++y) {
    const double sy = source_coord(y, image.height, m);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < m; ++x) {
      const double sx = source_coord(x, image.width, m);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double a = image.at(y0, x0, c), b = image.at(y0, x1, c);
        const double cc = image.at(y1, x0, c), d = image.at(y1, x1, c);
        const double top = a + fx * (b - a), bot = cc + fx * (d - cc);
        const double v = top + fy * (bot - top);
        img[(y * m + x) * 3 + c] = static_cast<float>(v / 127.5 - 1.0);
      }
      const std::uint8_t mv = mask.at(nearest_index(y, mask.height, m),
                                      nearest_index(x, mask.width, m), 0);
      msk[y * m + x] = mv > 127 ? 1.0f : 0.0f;
    }
  }
  return {std::move(id), Tensor<float>({m, m, 3}, std::move(img)),
          Tensor<float>({m, m, 1}, std::move(msk))};
}

Sample hflip(const Sample& s) {
  require_sample(s, "hflip");
  const double w = static_cast<double>(s.width()) - 1.0;
  return remap(s, [w](std::size_t y, std::size_t x) {
    return std::pair<double, double>(static_cast<double>(y), w - static_cast<double>(x));
  }, -1.0f, 0.0f);
}

Sample vflip(const Sample& s) {
  require_sample(s, "vflip");
  const double h = static_cast<double>(s.height()) - 1.0;
  return remap(s, [h](std::size_t y, std::size_t x) {
    return std::pair<double, double>(h - static_cast<double>(y), static_cast<double>(x));
  }, -1.0f, 0.0f);
}

Sample rotate(const Sample& s, double degrees) {
  require_sample(s, "rotate");
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(s.height()) - 1.0) / 2.0;
  const double cx = (static_cast<double>(s.width()) - 1.0) / 2.0;
  // Inverse map: rotate each output pixel back onto the source.
  return remap(s, [=](std::size_t y, std::size_t x) {
    const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
    return std::pair<double, double>(cy + (c * dy - sn * dx), cx + (sn * dy + c * dx));
  }, -1.0f, 0.0f);
}

Sample center_crop(const Sample& s, double fraction) {
  require_sample(s, "center_crop");
  const double f = std::clamp(fraction, 1e-6, 1.0);
  const std::size_t h = s.height(), w = s.width();
  const std::size_t ch = scaled_side(h, f), cw = scaled_side(w, f);
  const double y0 = static_cast<double>((h - ch) / 2), x0 = static_cast<double>((w - cw) / 2);
  return remap(s, [=](std::size_t y, std::size_t x) {
    return std::pair<double, double>(y0 + source_coord(y, ch, h), x0 + source_coord(x, cw, w));
  }, -1.0f, 0.0f);
}

Sample grid_distortion(const Sample& s, std::size_t cells, double magnitude, Rng& rng) {
  require_sample(s, "grid_distortion");
  if (cells == 0) throw ConfigError("grid_distortion: cells must be positive");
  const auto ys = grid_axis(s.height(), cells, magnitude, rng);
  const auto xs = grid_axis(s.width(), cells, magnitude, rng);
  return remap(s, [&](std::size_t y, std::size_t x) {
    return std::pair<double, double>(ys[y], xs[x]);
  }, -1.0f, 0.0f);
}

Sample cutout(const Sample& s, const Rect& r) {
  require_sample(s, "cutout");
  require_rect(s, r, "cutout");
  std::vector<float> img(s.image.values().begin(), s.image.values().end());
  for (std::size_t y = r.y0; y < r.y1; ++y) {
    for (std::size_t x = r.x0; x < r.x1; ++x) {
      for (std::size_t c = 0; c < 3; ++c) img[(y * s.width() + x) * 3 + c] = 0.0f;
    }
  }
  return {s.id, Tensor<float>(s.image.shape(), std::move(img)), s.mask};
}

Sample cutmix(const Sample& s, const Sample& donor, const Rect& r) {
  require_sample(s, "cutmix");
  require_sample(donor, "cutmix");
  if (donor.image.shape() != s.image.shape()) {
    throw DimensionError("cutmix: donor " + to_string(donor.image.shape()) + " vs " +
                         to_string(s.image.shape()));
  }
  require_rect(s, r, "cutmix");
  std::vector<float> img(s.image.values().begin(), s.image.values().end());
  std::vector<float> msk(s.mask.values().begin(), s.mask.values().end());
  const auto di = donor.image.values(), dm = donor.mask.values();
  for (std::size_t y = r.y0; y < r.y1; ++y) {
    for (std::size_t x = r.x0; x < r.x1; ++x) {
      const std::size_t p = y * s.width() + x;
      for (std::size_t c = 0; c < 3; ++c) img[p * 3 + c] = di[p * 3 + c];
      msk[p] = dm[p];
    }
  }
  return {s.id, Tensor<float>(s.image.shape(), std::move(img)),
          Tensor<float>(s.mask.shape(), std::move(msk))};
}

void AugmentConfig::validate() const {
  for (double p : {hflip_p, vflip_p, rotate_p, crop_p, grid_p, cutout_p, cutmix_p}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augment: probabilities must lie in [0, 1]");
  }
  if (!(crop_min_fraction > 0.0 && crop_min_fraction <= 1.0)) {
    throw ConfigError("augment: crop_min_fraction must lie in (0, 1]");
  }
  if (!(cutout_max_fraction > 0.0 && cutout_max_fraction <= 1.0)) {
    throw ConfigError("augment: cutout_max_fraction must lie in (0, 1]");
  }
  if (!(rotate_max_degrees >= 0.0)) throw ConfigError("augment: rotate_max_degrees must be >= 0");
  if (grid_cells == 0) throw ConfigError("augment: grid_cells must be positive");
  if (!(grid_magnitude >= 0.0 && grid_magnitude < 1.0)) {
    throw ConfigError("augment: grid_magnitude must lie in [0, 1)");
  }
  if (!(cutmix_beta > 0.0)) throw ConfigError("augment: cutmix_beta must be positive");
}

void AugmentConfig::write(KeyValueConfig& out) const {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out.set("aug.enabled", enabled ? "true" : "false");
  out.set("aug.hflip_p", num(hflip_p));
  out.set("aug.vflip_p", num(vflip_p));
  out.set("aug.rotate_p", num(rotate_p));
  out.set("aug.rotate_max_degrees", num(rotate_max_degrees));
  out.set("aug.crop_p", num(crop_p));
  out.set("aug.crop_min_fraction", num(crop_min_fraction));
  out.set("aug.grid_p", num(grid_p));
  out.set("aug.grid_cells", std::to_string(grid_cells));
  out.set("aug.grid_magnitude", num(grid_magnitude));
  out.set("aug.cutout_p", num(cutout_p));
  out.set("aug.cutout_max_fraction", num(cutout_max_fraction));
  out.set("aug.cutmix_p", num(cutmix_p));
  out.set("aug.cutmix_beta", num(cutmix_beta));
}

AugmentConfig AugmentConfig::read(const KeyValueConfig& in) {
  AugmentConfig c;
  c.enabled = in.get_bool("aug.enabled", c.enabled);
  c.hflip_p = in.get_double("aug.hflip_p", c.hflip_p);
  c.vflip_p = in.get_double("aug.vflip_p", c.vflip_p);
  c.rotate_p = in.get_double("aug.rotate_p", c.rotate_p);
  c.rotate_max_degrees = in.get_double("aug.rotate_max_degrees", c.rotate_max_degrees);
  c.crop_p = in.get_double("aug.crop_p", c.crop_p);
  c.crop_min_fraction = in.get_double("aug.crop_min_fraction", c.crop_min_fraction);
  c.grid_p = in.get_double("aug.grid_p", c.grid_p);
  c.grid_cells = in.get_size("aug.grid_cells", c.grid_cells);
  c.grid_magnitude = in.get_double("aug.grid_magnitude", c.grid_magnitude);
  c.cutout_p = in.get_double("aug.cutout_p", c.cutout_p);
  c.cutout_max_fraction = in.get_double("aug.cutout_max_fraction", c.cutout_max_fraction);
  c.cutmix_p = in.get_double("aug.cutmix_p", c.cutmix_p);
  c.cutmix_beta = in.get_double("aug.cutmix_beta", c.cutmix_beta);
  c.validate();
  return c;
}

Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng, const Sample* donor) {
  require_sample(s, "augment");
  if (!cfg.enabled) return s;
  cfg.validate();
  const std::size_t h = s.height(), w = s.width();
  Sample out = s;
  if (rng.bernoulli(cfg.crop_p)) out = center_crop(out, rng.uniform(cfg.crop_min_fraction, 1.0));
  if (rng.bernoulli(cfg.rotate_p)) {
    out = rotate(out, rng.uniform(-cfg.rotate_max_degrees, cfg.rotate_max_degrees));
  }
  if (rng.bernoulli(cfg.grid_p)) out = grid_distortion(out, cfg.grid_cells, cfg.grid_magnitude, rng);
  if (rng.bernoulli(cfg.hflip_p)) out = hflip(out);
  if (rng.bernoulli(cfg.vflip_p)) out = vflip(out);
  if (rng.bernoulli(cfg.cutout_p)) {
    const std::size_t rh = scaled_side(h, rng.uniform() * cfg.cutout_max_fraction);
    const std::size_t rw = scaled_side(w, rng.uniform() * cfg.cutout_max_fraction);
    const std::size_t y0 = rng.below(h - rh + 1), x0 = rng.below(w - rw + 1);
    out = cutout(out, {y0, x0, y0 + rh, x0 + rw});
  }
  if (donor != nullptr && rng.bernoulli(cfg.cutmix_p)) {
    // Box of area (1 − λ)·H·W centred uniformly, clamped to the image.
    const double side = std::sqrt(clamp01(1.0 - rng.beta(cfg.cutmix_beta, cfg.cutmix_beta)));
    const auto rh = static_cast<std::size_t>(std::llround(side * static_cast<double>(h)));
    const auto rw = static_cast<std::size_t>(std::llround(side * static_cast<double>(w)));
    const std::size_t cy = rng.below(h), cx = rng.below(w);
    Rect r{cy > rh / 2 ? cy - rh / 2 : 0, cx > rw / 2 ? cx - rw / 2 : 0, 0, 0};
    r.y1 = std::min(h, cy + (rh - rh / 2));
    r.x1 = std::min(w, cx + (rw - rw / 2));
    if (r.y1 > r.y0 && r.x1 > r.x0) out = cutmix(out, *donor, r);
  }
  return out;
}

Rng sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  return Rng(mix_seed(seed, epoch, index));
}

std::vector<RawPair> synth_polyp_raw(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size == 0 || size % 32 != 0) {
    throw ConfigError("synth: size " + std::to_string(size) + " must be a positive multiple of 32");
  }
  std::vector<RawPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, 0x5157, i));
    auto p = synth_one(size, rng);
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", i);
    p.id = id;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Sample> synth_polyp_dataset(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::vector<Sample> out;
  for (const auto& p : synth_polyp_raw(n, size, seed)) {
    out.push_back(preprocess(p.image, p.mask, size, p.id));
  }
  return out;
}

std::vector<RawPair> read_dataset_dir(const std::string& dir) {
  const fs::path images = fs::path(dir) / "images", masks = fs::path(dir) / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks)) {
    throw UsageError("dataset '" + dir + "' needs images/ and masks/ subdirectories");
  }
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
      ids.push_back(entry.path().stem().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  std::vector<RawPair> out;
  for (const auto& id : ids) {
    const auto mask_path = masks / (id + ".pgm");
    if (!fs::exists(mask_path)) throw UsageError("dataset: no mask for image '" + id + "'");
    out.push_back({id, read_pnm((images / (id + ".ppm")).string()), read_pnm(mask_path.string())});
  }
  return out;
}

void write_dataset_dir(const std::string& dir, const std::vector<RawPair>& pairs) {
  const fs::path images = fs::path(dir) / "images", masks = fs::path(dir) / "masks";
  fs::create_directories(images);
  fs::create_directories(masks);
  for (const auto& p : pairs) {
    write_pnm((images / (p.id + ".ppm")).string(), p.image);
    write_pnm((masks / (p.id + ".pgm")).string(), p.mask);
  }
}

std::vector<Sample> load_dataset(const std::string& dir, std::size_t target) {
  std::vector<Sample> out;
  for (const auto& p : read_dataset_dir(dir)) {
    out.push_back(preprocess(p.image, p.mask, target, p.id));
  }
  return out;
}

std::pair<Tensor<float>, Tensor<float>> make_batch(const std::vector<Sample>& samples,
                                                   std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("make_batch: empty batch");
  const Shape& shape = samples.at(indices[0]).image.shape();
  std::vector<float> img, msk;
  for (std::size_t i : indices) {
    const auto& s = samples.at(i);
    if (s.image.shape() != shape) {
      throw DimensionError("make_batch: sample '" + s.id + "' is " + to_string(s.image.shape()) +
                           ", expected " + to_string(shape));
    }
    img.insert(img.end(), s.image.values().begin(), s.image.values().end());
    msk.insert(msk.end(), s.mask.values().begin(), s.mask.values().end());
  }
  const std::size_t n = indices.size();
  return {Tensor<float>({n, shape[0], shape[1], 3}, std::move(img)),
          Tensor<float>({n, shape[0], shape[1], 1}, std::move(msk))};
}

RawImage probability_to_pgm(std::span<const float> prob, std::size_t height, std::size_t width) {
  if (prob.size() != height * width) {
    throw DimensionError("probability_to_pgm: " + std::to_string(prob.size()) +
                         " values for a " + std::to_string(height) + "x" + std::to_string(width) +
                         " plane");
  }
  RawImage out{width, height, 1, std::vector<std::uint8_t>(prob.size())};
  for (std::size_t i = 0; i < prob.size(); ++i) out.pixels[i] = to_byte(clamp01(prob[i]) * 255.0);
  return out;
}

}  // namespace m2unet
