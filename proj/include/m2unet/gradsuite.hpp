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
#include <string>
#include <vector>

namespace m2unet {

// One finite-difference case checked over several seeds; the reported error is
// the worst over all seeds.
struct GradSuiteResult {
  std::string module;
  std::string name;
  std::size_t seeds = 0;
  std::size_t probes = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::string worst;

  bool passed() const { return max_rel_error < tolerance; }
};

// "ops", "conv_former", "transformer", "mu", "jaccard_loss", "model".
const std::vector<std::string>& grad_suite_modules();

// Runs the f64 gradient checks of one module, or of every module when `module`
// is empty. Unknown names raise UsageError.
std::vector<GradSuiteResult> run_grad_suite(const std::string& module = "",
                                            std::size_t seeds = 20);

// Tab-separated: module, case, seeds, probes, max_rel_error, tolerance, status.
std::string grad_suite_tsv(const std::vector<GradSuiteResult>& results);

}  // namespace m2unet
