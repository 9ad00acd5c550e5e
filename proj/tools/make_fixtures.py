#!/usr/bin/env python3
"""Regenerates the ingestion fixtures under fixtures/.

The golden tensors come from an independent numpy implementation of the
resize + normalization contract, so the C++ decoder/preprocessor is checked
against a second implementation rather than against itself.

Usage: python3 tools/make_fixtures.py [fixtures_dir]
"""

import os
import sys

import numpy as np


def write_pnm(path, pixels, comment=None):
  pixels = np.asarray(pixels, dtype=np.uint8)
  if pixels.ndim == 2:
    magic, (h, w) = b"P5", pixels.shape
  else:
    magic, (h, w, _) = b"P6", pixels.shape
  header = magic + b"\n"
  if comment:
    header += b"# " + comment.encode() + b"\n"
  header += b"%d %d\n255\n" % (w, h)
  with open(path, "wb") as f:
    f.write(header + pixels.tobytes())


def source_coords(n, m):
  scale = float(n) / float(m)
  s = (np.arange(m, dtype=np.float64) + 0.5) * scale - 0.5
  s = np.clip(s, 0.0, float(n - 1))
  i0 = np.floor(s).astype(np.int64)
  i1 = np.minimum(i0 + 1, n - 1)
  return i0, i1, s - i0


def resize_bilinear_normalize(img, m):
  h, w, _ = img.shape
  y0, y1, fy = source_coords(h, m)
  x0, x1, fx = source_coords(w, m)
  src = img.astype(np.float64)
  fx = fx[None, :, None]
  fy = fy[:, None, None]
  a = src[y0][:, x0]
  b = src[y0][:, x1]
  c = src[y1][:, x0]
  d = src[y1][:, x1]
  top = a + fx * (b - a)
  bot = c + fx * (d - c)
  v = top + fy * (bot - top)
  return (v / 127.5 - 1.0).astype(np.float32)


def resize_nearest_binarize(mask, m):
  h, w = mask.shape
  yi = ((2 * np.arange(m) + 1) * h) // (2 * m)
  xi = ((2 * np.arange(m) + 1) * w) // (2 * m)
  return (mask[yi][:, xi] > 127).astype(np.float32)[:, :, None]


def write_tensor(path, t):
  with open(path, "w") as f:
    f.write(" ".join(str(d) for d in t.shape) + "\n")
    for v in t.reshape(-1):
      f.write("%.9g\n" % float(v))


def main():
  out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
      os.path.dirname(os.path.abspath(__file__)), "..", "fixtures")
  os.makedirs(out, exist_ok=True)
  rng = np.random.default_rng(20240611)

  # 2x2 colour grid with the byte extremes, decoded verbatim.
  tiny = np.array([[[0, 1, 2], [253, 254, 255]], [[10, 20, 30], [128, 127, 126]]], np.uint8)
  write_pnm(os.path.join(out, "tiny_2x2.ppm"), tiny)
  tiny_mask = np.array([[0, 255], [128, 127]], np.uint8)
  write_pnm(os.path.join(out, "tiny_2x2.pgm"), tiny_mask, comment="mask")

  # Upsampling (37x45 -> 64) and downsampling (100x90 -> 32) cases with a
  # soft-edged mask that exercises the >127 threshold.
  cases = [("up", 45, 37, 64), ("down", 90, 100, 32)]
  for name, h, w, target in cases:
    img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    r = np.hypot((yy - h / 2.0) / h, (xx - w / 2.0) / w)
    mask = np.clip(255.0 * (0.35 - r) / 0.1, 0, 255).astype(np.uint8)
    write_pnm(os.path.join(out, name + ".ppm"), img, comment="fixture " + name)
    write_pnm(os.path.join(out, name + ".pgm"), mask)
    write_tensor(os.path.join(out, "%s_%d.image.txt" % (name, target)),
                 resize_bilinear_normalize(img, target))
    write_tensor(os.path.join(out, "%s_%d.mask.txt" % (name, target)),
                 resize_nearest_binarize(mask, target))

  # Left half 0, right half 255: normalization endpoints at identity size.
  ends = np.zeros((32, 32, 3), np.uint8)
  ends[:, 16:, :] = 255
  write_pnm(os.path.join(out, "endpoints.ppm"), ends)
  write_pnm(os.path.join(out, "endpoints.pgm"), ends[:, :, 0])
  write_tensor(os.path.join(out, "endpoints_32.image.txt"), resize_bilinear_normalize(ends, 32))


if __name__ == "__main__":
  main()
