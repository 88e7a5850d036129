// Copyright 2026 The ectoken Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ECTOKEN_TESTS_UNIT_TEST_UTIL_H_
#define ECTOKEN_TESTS_UNIT_TEST_UTIL_H_

#include <vector>

#include "ectoken/nn.h"
#include "ectoken/tensor.h"

namespace ectoken::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, bool requires_grad = true,
                            double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, scale);
  return Tensor::from(shape, std::move(v), requires_grad);
}

inline Tensor positive_tensor(const Shape& shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(0.5, 2.0);
  return Tensor::from(shape, std::move(v), true);
}

// Three small shapes used by the gradient suites.
inline std::vector<Shape> small_shapes() { return {{3}, {2, 4}, {2, 3, 5}}; }

}  // namespace ectoken::testing

#endif  // ECTOKEN_TESTS_UNIT_TEST_UTIL_H_
