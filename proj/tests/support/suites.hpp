/* Copyright 2026 The Protoform Authors. All Rights Reserved.

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

// Randomized oracle suites shared by the unit and acceptance tests. Each
// compares a library routine against an independent brute-force reference.

#ifndef PROTOFORM_TESTS_SUPPORT_SUITES_HPP_
#define PROTOFORM_TESTS_SUPPORT_SUITES_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace protoform::testing {

struct SuiteResult {
  bool passed = true;
  int cases = 0;
  int failures = 0;
  double seconds = 0.0;
  double worst = 0.0;  // suite-specific error measure
  std::vector<std::string> messages;

  void Fail(std::string message) {
    passed = false;
    ++failures;
    if (messages.size() < 8) messages.push_back(std::move(message));
  }
  std::string Summary() const;
};

// Every differentiable op plus the combined loss, 64-bit, rtol 1e-3.
SuiteResult RunGradientSuite(std::uint64_t seed = 1);

// 100 random (mu, sigma): density integrates to 1 within 1e-5 on [-1, 1];
// its maximum sits at clamp(mu).
SuiteResult RunDensitySuite(std::uint64_t seed = 2);

// Cluster/separation vs exhaustive enumeration on 50 toy batches (1e-6);
// the total is the exact sum of its parts.
SuiteResult RunLossOracleSuite(std::uint64_t seed = 3);

// iou/ap/auc/mse vs definitional oracles on 100 random 20-point instances
// (1e-9).
SuiteResult RunMetricOracleSuite(std::uint64_t seed = 4);

// FPS, ball query, kNN (exact) and interpolation (1e-6) on 50 clouds of at
// most 256 points.
SuiteResult RunGeometryOracleSuite(std::uint64_t seed = 5);

// Full model and total loss: 32-bit autodiff against 64-bit central
// differences of an identical model, rtol 1e-2 (atol 1e-5), on `entries`
// parameter entries including every prototype tensor.
SuiteResult RunEndToEndGradientCheck(std::uint64_t seed = 6, int entries = 40);

}  // namespace protoform::testing

#endif  // PROTOFORM_TESTS_SUPPORT_SUITES_HPP_
