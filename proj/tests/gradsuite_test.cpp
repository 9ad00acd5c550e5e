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

#include "m2unet/gradsuite.hpp"

#include <gtest/gtest.h>

#include "m2unet/error.hpp"

namespace m2unet {
namespace {

TEST(GradSuiteTest, BlocksAndLossPassOnFewSeeds) {
  for (const char* module : {"ops", "conv_former", "transformer", "mu", "jaccard_loss"}) {
    for (const auto& r : run_grad_suite(module, 3)) {
      EXPECT_TRUE(r.passed()) << r.module << "/" << r.name << ": " << r.worst;
      EXPECT_EQ(r.seeds, 3u);
      EXPECT_GT(r.probes, 0u);
    }
  }
}

TEST(GradSuiteTest, TsvHasOneRowPerCase) {
  auto results = run_grad_suite("mu", 1);
  ASSERT_EQ(results.size(), 1u);
  const auto tsv = grad_suite_tsv(results);
  EXPECT_EQ(tsv.rfind("module\tcase\t", 0), 0u);
  EXPECT_NE(tsv.find("mu\tmu_block\t1\t"), std::string::npos);
  EXPECT_NE(tsv.find("\tok\n"), std::string::npos);
}

TEST(GradSuiteTest, Errors) {
  EXPECT_THROW(run_grad_suite("nope"), UsageError);
  EXPECT_THROW(run_grad_suite("ops", 0), UsageError);
}

}  // namespace
}  // namespace m2unet
