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

#ifndef ECTOKEN_GRAD_CHECK_H_
#define ECTOKEN_GRAD_CHECK_H_

#include <functional>
#include <vector>

#include "ectoken/tensor.h"

namespace ectoken {

//! Compares reverse-mode gradients of a scalar function against central
//! differences. Returns max over coordinates of
//! |analytic - numeric| / max(1, |analytic|).
double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& inputs, double eps = 1e-4);

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps = 1e-4);

}  // namespace ectoken

#endif  // ECTOKEN_GRAD_CHECK_H_
