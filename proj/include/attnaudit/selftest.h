/*
 * Copyright 2026 The attnaudit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#ifndef ATTNAUDIT_SELFTEST_H_
#define ATTNAUDIT_SELFTEST_H_

// Property suites run by `attnaudit selftest`: finite-difference checks of
// the training-loss and decision gradients over every architecture, and the
// Jensen-Shannon divergence laws. The building blocks are public so tests can
// drive them with their own sizes.

#include <cstdint>
#include <string>
#include <vector>

#include "attnaudit/autodiff.h"
#include "attnaudit/models.h"
#include "attnaudit/numerics.h"

namespace attnaudit {

// Small random configuration: every dimension in [1, 8], vocab in [3, 12],
// 2 to 5 classes and dropout either 0 or 0.25 at each site.
ModelConfig RandomSmallConfig(Architecture arch, EncoderKind encoder,
                              Rng& rng);
// 1 to max_sentences sentences of 1 to max_length random non-pad tokens.
Document RandomDocument(const ModelConfig& config, Rng& rng,
                        uint32_t max_sentences = 6, uint32_t max_length = 8);

// Central differences of the training loss (in train mode with a fixed
// dropout mask seed) against ComputeLossAndGrad, over every parameter. The
// differenced loss comes from the extended-precision ReferenceLoss.
GradCheckResult CheckLossGradient(const Model& model, const Document& doc,
                                  uint64_t dropout_seed, double eps = 1e-5);
// Central differences of d(x) over the final attention weights, held fixed as
// free variables, against GradDecisionWrtAlpha.
GradCheckResult CheckDecisionGradient(const Model& model, const Document& doc,
                                      double eps = 1e-5);

struct SelftestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelftestOptions {
  uint64_t seed = 1;
  uint32_t configs_per_architecture = 5;
  uint32_t divergence_pairs = 1000;
  double gradient_tolerance = 1e-4;
};

std::vector<SelftestCheck> RunSelftest(const SelftestOptions& options);

}  // namespace attnaudit

#endif  // ATTNAUDIT_SELFTEST_H_
