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

#include "ectoken/grad_check.h"

#include <algorithm>
#include <cmath>

namespace ectoken {

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                  double eps) {
  for (Tensor t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (const Tensor& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }
  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor t = inputs[i];
    auto x = t.mutable_data();
    for (std::size_t k = 0; k < x.size(); ++k) {
      double saved = x[k];
      x[k] = saved + eps;
      double fp = f().item();
      x[k] = saved - eps;
      double fm = f().item();
      x[k] = saved;
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic[i][k];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  return grad_check([&] { return f(x); }, {x}, eps);
}

}  // namespace ectoken
