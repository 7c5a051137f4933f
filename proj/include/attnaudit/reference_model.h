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


#ifndef ATTNAUDIT_REFERENCE_MODEL_H_
#define ATTNAUDIT_REFERENCE_MODEL_H_

// A second, deliberately plain implementation of the classifier forward pass
// in extended precision (long double). It shares no code with the tape-based
// forward pass and serves as the oracle for finite-difference gradient
// checks: double-precision loss evaluations carry rounding noise around
// 1e-16 * |loss|, which after division by 2 * eps swamps gradient entries
// below roughly 1e-7.

#include <cstdint>
#include <vector>

#include "attnaudit/models.h"
#include "attnaudit/numerics.h"

namespace attnaudit {

// Logits of `doc`. With a non-null rng, dropout masks are drawn in the same
// order as the train-mode forward pass (input vectors in sequence order,
// entries in index order, classifier input last).
std::vector<long double> ReferenceLogits(const Model& model,
                                         const Document& doc, Rng* rng);

// -log softmax(logits)[doc.label], with dropout masks drawn from a fresh
// Rng(dropout_seed).
long double ReferenceLoss(const Model& model, const Document& doc,
                          uint64_t dropout_seed);

}  // namespace attnaudit

#endif  // ATTNAUDIT_REFERENCE_MODEL_H_
