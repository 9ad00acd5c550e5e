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

#include <stdexcept>
#include <string>

namespace m2unet {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible shapes or extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (unknown kind, bad stride, violated invariant).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: wrong call order, out-of-range arguments, missing inputs.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed files or degenerate image data.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A forward op produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace m2unet
